"""Victim speech recognizer: vocabulary, CTC, recurrent model, corpus and training."""
