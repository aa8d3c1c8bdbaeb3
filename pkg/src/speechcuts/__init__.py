"""Speech corpus manifests, cut algebra, samplers and Kaldi interop."""
