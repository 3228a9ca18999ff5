# rlab/logic: corpus, alignment, model, decoding and analysis
