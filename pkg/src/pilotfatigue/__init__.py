"""EEG fatigue-level decoding: preprocessing, ICA cleaning, band-power features,
a hybrid CNN-LSTM classifier, a PSD-SVM baseline and a cross-validation harness."""

__version__ = "0.1.0"
