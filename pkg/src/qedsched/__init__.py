"""Scheduling control of multiclass many-server queues in heavy traffic.

The package pairs a finite-difference HJB solver for the limiting
diffusion control problem with an exact discrete-event simulator of the
finite system, so that policies built from the HJB solution can be run
at finite ``n`` and compared with the limiting value.
"""

from .costs import (CostSpec, abandonment, delay, eval_L, eval_Ltilde, growth_bound, idling, linear_queue,
                    local_holder_bound, power_queue, zero_cost)
from .diffusion import SdeRunConfig, compare_policies, simulate_cost, verification_drift
from .errors import *  # noqa: F401,F403
from .experiments import (ExperimentConfig, canonical_config, cmd_audit, cmd_simulate, cmd_solve, cmd_sweep,
                          config_from_dict, load_config)
from .hjb import (GridSpec, ValueGrid, domain_doubling_gap, drift, extract_policy_fn, gradient_fn, hamiltonian,
                  load_value_grid, mollify_policy, residual_report, save_value_grid, simplex_mesh, solve_hjb,
                  solve_k1_reference, value_fn)
from .params import (DiffusionCoeffs, LimitParams, SystemParams, build_system, diffusion_coeffs, initial_state_for,
                     rescale_state, traffic_slack, validate_limits)
from .policies import (SchedulingPolicy, baseline_assign, cmu_policy, cmu_theta_policy, make_policy, n_scp1_policy,
                       n_scp2_policy, n_scp_pick_class, p_scp_assign, p_scp_policy, priority_split, static_priority,
                       theta_round)
from .policyfn import CallablePolicy, ConstantPolicy, GridPolicy, MollifiedPolicy, PolicyFn
from .simulator import InterarrivalSampler, SimResult, horizon_for, replicate, run
from .state import QueueState

__version__ = "0.1.0"
