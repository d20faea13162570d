"""Hand-transcribed reference values."""

# CovNet30 at 224x224x3: (layer name, output shape, parameter count), one entry per row.
COVNET30_TABLE = [
    ('conv2D_1', (218, 218, 32), 4736),
    ('max_pooling_1', (109, 109, 32), 0),
    ('batchNo_1', (109, 109, 32), 128),
    ('conv2D_2', (105, 105, 64), 51264),
    ('max_pooling_2', (52, 52, 64), 0),
    ('batchNo_2', (52, 52, 64), 256),
    ('dropout_1', (52, 52, 64), 0),
    ('conv2D_3', (50, 50, 128), 73856),
    ('max_pooling_3', (25, 25, 128), 0),
    ('batchNo_3', (25, 25, 128), 512),
    ('dropout_2', (25, 25, 128), 0),
    ('conv2D_4', (23, 23, 128), 147584),
    ('max_pooling_4', (11, 11, 128), 0),
    ('batchNo_4', (11, 11, 128), 512),
    ('dropout_3', (11, 11, 128), 0),
    ('conv2D_5', (9, 9, 256), 295168),
    ('batchNo_5', (9, 9, 256), 1024),
    ('dropout_4', (9, 9, 256), 0),
    ('conv2D_6', (7, 7, 256), 590080),
    ('batchNo_6', (7, 7, 256), 1024),
    ('dropout_5', (7, 7, 256), 0),
    ('conv2D_7', (5, 5, 512), 1180160),
    ('batchNo_7', (5, 5, 512), 2048),
    ('dropout_6', (5, 5, 512), 0),
    ('conv2D_8', (3, 3, 512), 2359808),
    ('batchNo_8', (3, 3, 512), 2048),
    ('dropout_7', (3, 3, 512), 0),
    ('globAvgPooling', (512,), 0),
    ('FC_1', (1000,), 513000),
    ('FC_2', (3,), 3003),
]

COVNET30_TOTAL = 5_226_211
