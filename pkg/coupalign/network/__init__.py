from coupalign.network.model import CoupAlign, Prediction, binarize
from coupalign.network.params import ParamStore
