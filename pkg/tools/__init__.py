"""Pipeline tools: corpus preparation, embedding pre-training, training and persistence."""
