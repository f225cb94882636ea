"""Multi-vehicle channel search: PBACS versus lawnmower and myopic MDP planners.

Modules: ``scenario`` (bathymetry grids), ``gpr`` (fast Gaussian process
regression), ``consensus`` (decentralized Kalman consensus), ``pbacs``,
``lawnmower``, ``mdp`` (planners), ``simkernel`` (mission engine) and
``harness`` (Monte Carlo experiments and reports).
"""
from .consensus import BeliefFusion, CommGraph, ConsensusConfig, ConsensusState, consensus_round, run_consensus
from .gpr import BeliefMap, FastGprConfig, GprCache, KernelConfig, Measurement, fit_predict, incremental_update, kernel
from .harness import ExperimentSpec, aggregate, paper_spec, report, run_experiment
from .lawnmower import LawnmowerPlan, generate_lawnmower
from .mdp import MdpConfig, MdpState, MyopicPlanner, actions, mvi_reward, plan_action, transition, ucb_reward
from .pbacs import (CandidatePath, PbacsAgent, PbacsConfig, SearchGrid, build_search_grid, check_channel_found,
                    choose_direction, find_candidate_path, pbacs_step, resolve_proposals, sweep_assignment,
                    variance_threshold)
from .scenario import (BathyScenario, Cell, cell_center, generate_scenario, generate_suite, load_scenario,
                       mirror_scenario, position_to_cell, save_scenario)
from .simkernel import MissionConfig, MissionRecord, SimConfig, VehicleState, run_mission, sample_depth, step_vehicle

__version__ = "0.1.0"
