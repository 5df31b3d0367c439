"""Geometrically-explicit monolithic FSI time stepper.

Each step, in order: (1) harmonic extension of the wall displacement moves
the fluid mesh, (2) the domain velocity is its difference quotient, (3) the
valve controller reacts to the old pressure jump, (4) valve forces and the
attachment load are computed from old-level fields, (5) one Newton solve on
the frozen new geometry couples fluid velocity/pressure and wall displacement
monolithically, with interface fluid-velocity DOFs eliminated in favor of the
wall displacement increment, (6) history rotates.

The elimination makes the interface velocity condition exact by construction
and, because the fluid and solid weak forms are summed with shared interface
test functions, stress continuity is natural.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import mesh as meshmod
from .config import SimConfig
from .diagnostics import (
    DiagnosticsRow,
    center_of_mass,
    chamber_area,
    chamber_pressure_jump,
    divergence_integral,
    load_torque,
)
from .errors import AssumptionViolation, ValveFsiError
from .fem import DofMap, NodalField, assemble, assemble_vector, build_reduction
from .fluid import FluidParams, MeshMotionSolver, ns_residual
from .solid import SolidParams, attachment_rhs, solid_blocks
from .solvers import newton_solve
from .valves import (
    ValveForces,
    ValveState,
    ValveSurface,
    controller_step,
    valve_force,
    valve_solid_integrals,
)


@dataclass
class FsiState:
    """All unknowns at the current time level plus the needed history."""

    t: float
    u: NodalField
    p: NodalField
    d: NodalField
    d_prev: NodalField
    d_ale: NodalField
    d_ale_prev: NodalField
    valve_states: list
    valve_forces: list | None = None


@dataclass
class StepReport:
    """Solver effort, wall-time breakdown and valve bookkeeping for one step."""

    step: int
    t: float
    newton_iterations: int
    residual_norms: list
    time_total: float
    time_linear: float
    time_fluid_assembly: float
    time_solid_assembly: float
    time_compute_g: float
    valve_forces: list
    valve_states: list
    torques: list
    interface_mismatch: float
    attachment_balance_error: float | None


@dataclass
class Trajectory:
    """Diagnostics, reports and optional snapshots of one simulation run."""

    config: SimConfig
    rows: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    error: str | None = None
    started_at: str = ""
    finished_at: str = ""
    problem: "FsiProblem | None" = None

    @property
    def failed(self) -> bool:
        return self.error is not None


def _valve_from_config(vc) -> ValveSurface:
    return ValveSurface(
        name=vc.name,
        closed_endpoints=np.asarray(vc.closed_endpoints, dtype=float),
        open_endpoints=None
        if vc.open_endpoints is None
        else np.asarray(vc.open_endpoints, dtype=float),
        half_thickness=vc.half_thickness,
        resistance=vc.resistance,
        open_ramp=vc.open_ramp,
        close_ramp=vc.close_ramp,
        opens_on_negative_jump=vc.opens_on_negative_jump,
        controller_enabled=vc.controller_enabled,
        downstream_side=vc.downstream_side,
        initial_state=ValveState(
            phase="closed" if vc.initial_blend >= 0.5 else "open",
            blend=vc.initial_blend,
        ),
    )


class FsiProblem:
    """Meshes, parameters and solver scaffolding for one configuration."""

    def __init__(self, config: SimConfig):
        self.config = config.validate()
        g = config.geometry
        if g.scenario == "annulus":
            self.pair = meshmod.generate_annulus_benchmark(
                g.fluid_radius, g.wall_thickness, g.target_h
            )
            fibers = meshmod.circumferential_fibers(self.pair.solid)
            clamped_nodes = np.array([], dtype=np.int64)
            self.boundary_pressures = None
        else:
            self.pair = meshmod.generate_channel_benchmark(
                g.length, g.height, g.target_h, g.wall_thickness
            )
            fibers = meshmod.horizontal_fibers(self.pair.solid)
            clamped_nodes = self.pair.solid.nodes_with_tag(meshmod.EXTERIOR_TAG)
            self.boundary_pressures = {
                meshmod.INLET_TAG: config.inlet_pressure,
                meshmod.OUTLET_TAG: config.outlet_pressure,
            }

        self.fluid_mesh = self.pair.fluid
        self.solid_mesh = self.pair.solid
        self.interface = self.pair.interface
        self.fluid_params = FluidParams(
            density=config.fluid.density,
            viscosity=config.fluid.viscosity,
            stabilization=config.fluid.stabilization,
        )
        self.solid_params = SolidParams(
            density=config.solid.density,
            shear_modulus=config.solid.shear_modulus,
            bulk_modulus=config.solid.bulk_modulus,
            active_peak=config.solid.active_peak,
            active_peak_time=config.solid.active_peak_time,
            fibers=fibers,
        )
        self.valves = [_valve_from_config(vc) for vc in config.valves]
        self.dt = config.dt

        self.dof_map = DofMap(
            [
                ("u", self.fluid_mesh.n_nodes, 2),
                ("p", self.fluid_mesh.n_nodes, 1),
                ("d", self.solid_mesh.n_nodes, 2),
            ]
        )
        self.motion = MeshMotionSolver(self.fluid_mesh, self.interface.fluid_nodes)

        # interface elimination u = (d - d_old)/dt plus any wall clamp
        coupled = []
        slave_dofs, master_dofs = [], []
        for fn, sn in zip(self.interface.fluid_nodes, self.interface.solid_nodes):
            for comp in range(2):
                slave = int(self.dof_map.index("u", fn, comp))
                master = int(self.dof_map.index("d", sn, comp))
                coupled.append((slave, master, 1.0 / self.dt, 1.0, 0.0))
                slave_dofs.append(slave)
                master_dofs.append(master)
        fixed = {
            int(self.dof_map.index("d", node, comp)): 0.0
            for node in clamped_nodes
            for comp in range(2)
        }
        self.reduction = build_reduction(self.dof_map.n_dofs, fixed=fixed, coupled=coupled)
        self._slave_dofs = np.asarray(slave_dofs, dtype=np.int64)
        self._master_dofs = np.asarray(master_dofs, dtype=np.int64)

    # ------------------------------------------------------------------

    def initial_state(self) -> FsiState:
        f, s = self.fluid_mesh, self.solid_mesh
        return FsiState(
            t=0.0,
            u=NodalField.zeros(f, 2),
            p=NodalField.zeros(f, 1),
            d=NodalField.zeros(s, 2),
            d_prev=NodalField.zeros(s, 2),
            d_ale=NodalField.zeros(f, 2),
            d_ale_prev=NodalField.zeros(f, 2),
            valve_states=[v.initial_state for v in self.valves],
        )

    # ------------------------------------------------------------------

    def step(self, state: FsiState, step_index: int = 0):
        """Advance one time level; returns (new_state, report)."""
        t_start = time.perf_counter()
        dt = self.dt
        t_new = state.t + dt
        dof_map = self.dof_map
        time_linear = 0.0

        # (1) mesh motion with the old wall displacement as interface datum
        t0 = time.perf_counter()
        iface_data = state.d.values[self.interface.solid_nodes]
        d_ale_new = self.motion.extend(iface_data)
        time_linear += time.perf_counter() - t0
        coords_new = self.fluid_mesh.nodes + d_ale_new.values
        coords_old = self.fluid_mesh.nodes + state.d_ale.values

        # (2) domain velocity
        u_ale_new = (d_ale_new.values - state.d_ale.values) / dt
        u_ale_old = (state.d_ale.values - state.d_ale_prev.values) / dt

        # (3) controller driven by the old pressure jump
        t0 = time.perf_counter()
        new_valve_states = []
        for valve, vstate in zip(self.valves, state.valve_states):
            if valve.controller_enabled:
                dp = chamber_pressure_jump(
                    state.p.values[:, 0], coords_old, self.fluid_mesh.cells, valve, vstate
                )
                vstate = controller_step(valve, vstate, dp, dt)
            new_valve_states.append(vstate)

        # (4) valve forces and attachment load from old-level fields
        valve_forces = []
        load = np.zeros(dof_map.n_dofs)
        torques = []
        balance_error = None
        solid_coords_old = self.solid_mesh.nodes + state.d.values
        com_old = center_of_mass(
            coords_old,
            self.fluid_mesh.cells,
            solid_coords_old,
            self.solid_mesh.cells,
            self.fluid_params.density,
            self.solid_params.density,
        )
        for valve, vstate in zip(self.valves, new_valve_states):
            force = valve_force(
                valve,
                vstate,
                coords_old,
                self.fluid_mesh.cells,
                state.u.values,
                u_ale_old,
            )
            volume, flagged, weighted = valve_solid_integrals(
                valve, vstate, self.solid_mesh, state.d.values
            )
            if volume < 1e-12:
                raise AssumptionViolation(valve.name, volume, 1e-12)
            forces = ValveForces(force=force, volume=volume)
            valve_forces.append(forces)
            if self.config.attachment_force:
                valve_load = np.zeros(dof_map.n_dofs)
                d_dofs = dof_map.cell_dofs("d", self.solid_mesh.cells[flagged])
                local = np.einsum("ca,i->cai", weighted, forces.density)
                np.add.at(valve_load, d_dofs.ravel(), local.reshape(flagged.size, -1).ravel())
                load += valve_load
                d_slice = dof_map.block("d")
                resultant = valve_load[d_slice].reshape(-1, 2).sum(axis=0)
                err = np.linalg.norm(resultant - force) / (1.0 + np.linalg.norm(force))
                balance_error = err if balance_error is None else max(balance_error, err)
                torques.append(
                    load_torque(
                        valve_load[d_slice], solid_coords_old, com_old
                    )
                )
            else:
                torques.append(0.0)
        time_compute_g = time.perf_counter() - t0

        # (5) assemble the frozen fluid system once per step
        t0 = time.perf_counter()
        matrix_blocks, vector_blocks = ns_residual(
            self.fluid_mesh,
            coords_new,
            dof_map,
            self.fluid_params,
            dt,
            state.u.values,
            u_ale_new,
            valves=list(zip(self.valves, new_valve_states)),
            boundary_pressures=self.boundary_pressures,
        )
        fluid_sys = assemble(matrix_blocks, dof_map.n_dofs, dof_map)
        A_f = fluid_sys.matrix
        r0_f = assemble_vector(vector_blocks, dof_map.n_dofs)
        time_fluid_assembly = time.perf_counter() - t0

        # interface elimination shift: u_iface = (d - d_old)/dt
        red = self.reduction
        red.shift[self._slave_dofs] = (
            -state.d.values[self.interface.solid_nodes].ravel() / dt
        )

        d_slice = dof_map.block("d")
        d_n = state.d.values
        d_nm1 = state.d_prev.values
        timing = {"solid": 0.0}

        def split(U):
            return U[d_slice].reshape(-1, 2)

        def residual(x):
            U = red.full_vector(x)
            t1 = time.perf_counter()
            _, vblocks = solid_blocks(
                self.solid_mesh,
                dof_map,
                self.solid_params,
                dt,
                split(U),
                d_n,
                d_nm1,
                t_new,
                load=load,
                with_matrix=False,
            )
            r_full = A_f @ U + r0_f + assemble_vector(vblocks, dof_map.n_dofs)
            timing["solid"] += time.perf_counter() - t1
            return red.reduce_residual(r_full)

        def jacobian(x):
            U = red.full_vector(x)
            t1 = time.perf_counter()
            mblocks, _ = solid_blocks(
                self.solid_mesh,
                dof_map,
                self.solid_params,
                dt,
                split(U),
                d_n,
                d_nm1,
                t_new,
                with_matrix=True,
            )
            K_s = assemble(mblocks, dof_map.n_dofs).matrix
            timing["solid"] += time.perf_counter() - t1
            return red.reduce_matrix(A_f + K_s)

        U_warm = np.concatenate(
            [state.u.values.ravel(), state.p.values.ravel(), d_n.ravel()]
        )
        x0 = red.restrict(U_warm)
        x_new, newton_report = newton_solve(
            residual,
            jacobian,
            x0,
            abs_tol=self.config.newton_abs_tol,
            rel_tol=self.config.newton_rel_tol,
            max_iter=self.config.newton_max_iter,
        )
        time_linear += newton_report.linear_solve_time

        U_new = red.full_vector(x_new)
        u_new = U_new[dof_map.block("u")].reshape(-1, 2)
        p_new = U_new[dof_map.block("p")].reshape(-1, 1)
        d_new = U_new[d_slice].reshape(-1, 2)

        mismatch = np.abs(
            u_new[self.interface.fluid_nodes]
            - (d_new[self.interface.solid_nodes] - d_n[self.interface.solid_nodes]) / dt
        )
        interface_mismatch = float(mismatch.max()) if mismatch.size else 0.0

        new_state = FsiState(
            t=t_new,
            u=NodalField(self.fluid_mesh, u_new),
            p=NodalField(self.fluid_mesh, p_new),
            d=NodalField(self.solid_mesh, d_new),
            d_prev=state.d,
            d_ale=d_ale_new,
            d_ale_prev=state.d_ale,
            valve_states=new_valve_states,
            valve_forces=valve_forces,
        )
        report = StepReport(
            step=step_index,
            t=t_new,
            newton_iterations=newton_report.iterations,
            residual_norms=newton_report.residual_norms,
            time_total=time.perf_counter() - t_start,
            time_linear=time_linear,
            time_fluid_assembly=time_fluid_assembly,
            time_solid_assembly=timing["solid"],
            time_compute_g=time_compute_g,
            valve_forces=valve_forces,
            valve_states=new_valve_states,
            torques=torques,
            interface_mismatch=interface_mismatch,
            attachment_balance_error=balance_error,
        )
        return new_state, report

    # ------------------------------------------------------------------

    def diagnostics_row(
        self, state: FsiState, report: StepReport, prev_com: np.ndarray, prev_t: float
    ) -> DiagnosticsRow:
        coords_f = self.fluid_mesh.nodes + state.d_ale.values
        coords_s = self.solid_mesh.nodes + state.d.values
        com = center_of_mass(
            coords_f,
            self.fluid_mesh.cells,
            coords_s,
            self.solid_mesh.cells,
            self.fluid_params.density,
            self.solid_params.density,
        )
        row = DiagnosticsRow(
            t=state.t,
            com=com,
            com_velocity_y=float(com[1] - prev_com[1]) / (state.t - prev_t),
            u_max=float(np.abs(state.u.values).max()),
            div_u=divergence_integral(state.u.values, coords_f, self.fluid_mesh.cells),
        )
        for valve, vstate, forces, torque in zip(
            self.valves, state.valve_states, report.valve_forces, report.torques
        ):
            row.valve_names.append(valve.name)
            row.pressure_jumps.append(
                chamber_pressure_jump(
                    state.p.values[:, 0], coords_f, self.fluid_mesh.cells, valve, vstate
                )
            )
            row.forces.append(forces.force)
            row.volumes.append(forces.volume)
            row.density_norms.append(forces.density_norm)
            row.torques.append(torque)
            row.blends.append(vstate.blend)
            row.chamber_areas.append(
                chamber_area(
                    self.fluid_mesh.nodes, coords_f, self.fluid_mesh.cells, valve
                )
            )
        return row

    def initial_com(self) -> np.ndarray:
        return center_of_mass(
            self.fluid_mesh.nodes,
            self.fluid_mesh.cells,
            self.solid_mesh.nodes,
            self.solid_mesh.cells,
            self.fluid_params.density,
            self.solid_params.density,
        )


def _snapshot(state: FsiState, step: int) -> tuple:
    return (
        step,
        {
            "t": state.t,
            "u": state.u.values.copy(),
            "p": state.p.values.copy(),
            "d": state.d.values.copy(),
            "d_ale": state.d_ale.values.copy(),
        },
    )


def run_simulation(config: SimConfig, problem: FsiProblem | None = None) -> Trajectory:
    """Step the configured scenario from rest to the final time.

    Step failures mark the trajectory instead of raising, so partial results
    can still be flushed by the caller.
    """
    from datetime import datetime, timezone

    problem = problem or FsiProblem(config)
    trajectory = Trajectory(config=config, problem=problem)
    trajectory.started_at = datetime.now(timezone.utc).isoformat()

    state = problem.initial_state()
    trajectory.snapshots.append(_snapshot(state, 0))
    n_steps = int(round(config.final_time / config.dt))
    prev_com = problem.initial_com()

    for k in range(1, n_steps + 1):
        try:
            state, report = problem.step(state, step_index=k)
        except ValveFsiError as exc:
            trajectory.error = f"step {k}: {exc}"
            break
        trajectory.reports.append(report)
        if k % config.diagnostic_cadence == 0:
            row = problem.diagnostics_row(state, report, prev_com)
            trajectory.rows.append(row)
            prev_com = row.com
        if config.snapshot_every and k % config.snapshot_every == 0:
            trajectory.snapshots.append(_snapshot(state, k))

    trajectory.finished_at = datetime.now(timezone.utc).isoformat()
    return trajectory
