"""Statistical estimation and hypothesis testing for hidden Markov and Gauss-Markov systems."""
