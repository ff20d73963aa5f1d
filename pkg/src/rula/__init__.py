"""RuLa: a rule-definition language compiler and RuleSet simulator for repeater chains."""

__version__ = "0.1.0"
