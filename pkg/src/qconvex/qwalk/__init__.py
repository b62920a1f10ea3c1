"""Finite-chain quantum-walk simulator: walk operators, reflectors, state evolution, grid annealing."""

from .chain import (DiscreteChain, NonReversibleWarning, ReducibleChain, birth_death_chain,
                    discriminant, dump_chain, hit_and_run_grid_chain, lazy_cycle_chain,
                    load_chain, metropolis_grid_chain, mixing_time, random_reversible_chain,
                    stationary, tv_distance)
from .walk import (GapReport, MixingPreconditionError, PureState, WalkFactors, WalkOperator,
                   build_walk, coherent_encode, effective_gap_report, match_phases,
                   predicted_eigenphases, spectrum_csv)
from .reflect import (OMEGA, ApproxReflector, ExactReflector, approx_reflector, pi3_amplify,
                      pi3_bound, pi3_uses, reflector_parameters)
from .evolve import (OverlapTooSmall, PrepareReport, encode_stationary, l2_warmness,
                     prepare_next_state)
from .rounding import (moment_observables, moments_from_estimates, nondestructive_estimate,
                       nondestructive_round)
from .qanneal import (GridProblem, classical_grid_annealing, gibbs_density,
                      simulate_q_annealing)

__all__ = [name for name in dir() if not name.startswith("_")]
