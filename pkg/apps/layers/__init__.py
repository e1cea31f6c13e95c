"""Neural building blocks: LSTM, BiLSTM, conv1d, pooling, dense, minibatch discrimination."""
