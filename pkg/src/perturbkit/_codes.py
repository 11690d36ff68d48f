"""Integer codes shared by the compiled and pure-Python kernel backends."""

OP_DENSE = 0
OP_ACT = 1

ACT_RELU = 0
ACT_TANH = 1
ACT_SIGMOID = 2
ACT_SOFTMAX = 3
ACT_IDENTITY = 4

ACTIVATION_CODES = {
    "relu": ACT_RELU,
    "tanh": ACT_TANH,
    "sigmoid": ACT_SIGMOID,
    "softmax": ACT_SOFTMAX,
    "identity": ACT_IDENTITY,
}
