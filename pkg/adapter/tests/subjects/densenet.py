"""Desk-scale dense-stack builder with the classic integer-division slip.

Validation mirrors a small public convnet builder; the layer-count helper
stands in for the framework call that rejects non-integer layer counts.
"""


def _as_layer_count(n):
    if not isinstance(n, int) or isinstance(n, bool):
        raise TypeError("layer count must be an integer, got %r" % (n,))
    return n


def DenseNet(input_shape=None, dense_blocks=3, dense_layers=-1, growth_rate=12,
             nb_classes=None, dropout_rate=None, bottleneck=False,
             compression=1.0, weight_decay=1e-4, depth=40):
    if nb_classes is None:
        raise Exception("Please define number of classes")
    if compression <= 0.0 or compression > 1.0:
        raise Exception("Compression must be between 0.0 and 1.0.")
    if type(dense_layers) is list:
        if len(dense_layers) != dense_blocks:
            raise AssertionError("Dense blocks must be the same as layers")
        per_block = [_as_layer_count(n) for n in dense_layers]
    else:
        if dense_layers == -1:
            dense_layers = (depth - 4) / 3  # / always returns a float
        per_block = [_as_layer_count(dense_layers)] * dense_blocks
    width, height, channels = input_shape
    return {
        "blocks": per_block,
        "pixels": width * height * channels,
        "rate": growth_rate,
        "classes": nb_classes,
        "dropout": dropout_rate,
        "bottleneck": bottleneck,
        "compression": compression,
        "decay": weight_decay,
    }
