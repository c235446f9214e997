from amplab.nonlinear import TestFunction

# pytest would otherwise try to collect the library's TestFunction dataclass
TestFunction.__test__ = False
