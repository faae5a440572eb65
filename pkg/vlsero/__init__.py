"""Joint Bayesian model of diagnostic RNA, sgRNA and IgG seroconversion trajectories."""

__version__ = "0.1.0"
