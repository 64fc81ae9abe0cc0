"""Physics-informed masked autoencoding of spin Hamiltonians."""
from .hamgen import DatasetRecord, FamilySpec, generate, generate_many
from .saliency import Kind, SaliencyMasker, SaliencyStrategy
from .spinops import Hamiltonian, HamiltonianTerm, PauliString
from .tokenizer import HamiltonianTokenizer, TokenizerConfig

__version__ = "0.1.0"

__all__ = [
    "DatasetRecord", "FamilySpec", "Hamiltonian", "HamiltonianTerm", "HamiltonianTokenizer", "Kind",
    "PauliString", "SaliencyMasker", "SaliencyStrategy", "TokenizerConfig", "generate", "generate_many",
]
