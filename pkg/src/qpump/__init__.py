"""
QPUMP - Quasiparticle pumping toolkit
Simulación y análisis de relajación de qubits limitada por cuasipartículas
"""

__version__ = "1.0.0"
