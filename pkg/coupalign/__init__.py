# coupalign package
