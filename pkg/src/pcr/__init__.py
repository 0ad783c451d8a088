"""Private counterfactual retrieval over non-colluding servers."""
