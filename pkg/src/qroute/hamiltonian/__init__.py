from .blockencoding import BlockEncoding, block_encode, pauli_decompose, pauli_matrix
from .qsvt import QsvtPhaseSequence, projector_phase, qsvt_block, qsvt_circuit, svd_oracle
from .qubo import (
    PauliHamiltonian,
    PenaltyWeights,
    QuboModel,
    build_qubo,
    decode_assignment,
    qubo_energy,
    to_ising,
)
from .variational import OptimizerConfig, VariationalParams, variational_solve
