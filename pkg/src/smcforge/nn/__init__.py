from .autograd import (
    Tensor,
    backward,
    conv2d,
    conv_transpose2d,
    masked_mse,
    no_grad,
)
from .cells import ConvLstmCellParams, LstmCellParams, convlstm_step, lstm_step
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import check_gradients
from .optim import AdamState, adam_update, clip_by_global_norm

__all__ = [
    "AdamState",
    "ConvLstmCellParams",
    "LstmCellParams",
    "Tensor",
    "adam_update",
    "backward",
    "check_gradients",
    "clip_by_global_norm",
    "conv2d",
    "conv_transpose2d",
    "convlstm_step",
    "load_checkpoint",
    "lstm_step",
    "masked_mse",
    "no_grad",
    "save_checkpoint",
]
