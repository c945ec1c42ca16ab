from coupalign.models.run import EpochRecord, Run
