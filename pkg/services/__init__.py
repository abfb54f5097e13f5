# Services package for signal processing, training and storage
