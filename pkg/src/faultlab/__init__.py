"""faultlab: desk-scale IIoT telemetry simulation and fault-detection stack.

Modules:
    simgen       telemetry simulator + fault injection (three regimes)
    nncore       from-scratch LSTM/dense numerics, Adam, training loop
    changepoint  LSTM-autoencoder change-point detection (Task 1 backbone)
    segclass     classical classifiers on windowed segment features
    cascade      the three-task SMTCNN pipeline and its ablations
    evaluation   metrics, sequential CV plans, report rendering
    experiment   full experiment orchestration over CV folds
    cli          the `faultlab` command
"""

__version__ = "0.1.0"
