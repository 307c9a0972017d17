//! Inverse-dynamics QP over `X = [q̈; u; λ; s]` and the per-tick controller.
//!
//! The equations of motion and the holonomic constraints enter as equalities, so the
//! controller never factors or inverts the mass matrix.

use nalgebra::{DMatrix, DVector, Vector2};
use serde::Serialize;

use crate::constraints::{
    friction_rows_with, support_polygon_from_poses, wrench_map, zmp_rows, zmp_with, ContactSpec,
    SupportPolygon, DEFAULT_ZMP_SHRINK, MIN_NORMAL_FORCE,
};
use crate::error::{Error, Result};
use crate::multibody::{
    constraint_rows, inverse_dynamics_from, mass_matrix_from, ConstraintRows, FrameId, FramePose, Kinematics,
    RobotModel, State, WeldedContact,
};
use crate::qp::{self, QpProblem, QpSettings, QpSolution, QpStatus};
use crate::safety::{aecbf_row, BarrierEval, BarrierSpec, BarrierState};
use crate::tasks::{stack_tasks, TaskSpec, TaskStack};

/// Diagonal of `Γ` per variable block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Regularization {
    pub qddot: f64,
    pub torque: f64,
    pub wrench: f64,
}

impl Default for Regularization {
    fn default() -> Self {
        Regularization { qddot: 1e-4, torque: 1e-3, wrench: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerOptions {
    pub regularization: Regularization,
    pub zmp_shrink: f64,
    pub min_normal_force: f64,
    /// Penalty on each barrier slack.
    pub slack_weight: f64,
    pub torque_limits: bool,
    pub friction: bool,
    pub zmp: bool,
    /// Actuator indices held at zero torque, e.g. a stance ankle rendered passive.
    pub passive: Vec<usize>,
    pub qp: QpSettings,
}

impl Default for ControllerOptions {
    fn default() -> Self {
        ControllerOptions {
            regularization: Regularization::default(),
            zmp_shrink: DEFAULT_ZMP_SHRINK,
            min_normal_force: MIN_NORMAL_FORCE,
            slack_weight: 1e6,
            torque_limits: true,
            friction: true,
            zmp: true,
            passive: Vec::new(),
            qp: QpSettings::default(),
        }
    }
}

/// A contact held in place for the current domain.
#[derive(Debug, Clone)]
pub struct ActiveContact {
    pub spec: ContactSpec,
    pub frame: FrameId,
    pub anchor: FramePose,
}

impl ActiveContact {
    pub fn welded(&self) -> WeldedContact {
        WeldedContact { frame: self.frame, kind: self.spec.kind, anchor: self.anchor.clone() }
    }
}

pub fn welded(contacts: &[ActiveContact]) -> Vec<WeldedContact> {
    contacts.iter().map(ActiveContact::welded).collect()
}

/// Offsets of the variable blocks in `X`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariableLayout {
    pub n: usize,
    pub m: usize,
    pub loops: usize,
    pub contact: usize,
    pub slack: usize,
}

impl VariableLayout {
    pub fn qddot(&self) -> usize {
        0
    }
    pub fn u(&self) -> usize {
        self.n
    }
    pub fn lambda(&self) -> usize {
        self.n + self.m
    }
    /// Start of the contact part of `λ`, after the loop-closure multipliers.
    pub fn contact_lambda(&self) -> usize {
        self.lambda() + self.loops
    }
    pub fn lambda_len(&self) -> usize {
        self.loops + self.contact
    }
    pub fn slack(&self) -> usize {
        self.lambda() + self.lambda_len()
    }
    pub fn len(&self) -> usize {
        self.slack() + self.slack
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ranges of each inequality family inside `A_in`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RowMap {
    pub torque: std::ops::Range<usize>,
    pub friction: std::ops::Range<usize>,
    pub zmp: std::ops::Range<usize>,
    pub barrier: std::ops::Range<usize>,
    pub slack: std::ops::Range<usize>,
}

/// Evaluated barrier with its QP row.
#[derive(Debug, Clone)]
pub struct BarrierRow {
    pub name: String,
    pub eval: BarrierEval,
    pub state: BarrierState,
    pub slack: bool,
}

#[derive(Debug, Clone)]
pub struct Assembly {
    pub problem: QpProblem,
    pub layout: VariableLayout,
    pub rows: RowMap,
    pub mass: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub actuation: DMatrix<f64>,
    pub constraints: ConstraintRows,
    pub tasks: TaskStack,
    pub barriers: Vec<BarrierRow>,
    pub polygon: Option<SupportPolygon>,
    /// Stacked contact wrenches to world wrench about the origin.
    pub wrench_map: DMatrix<f64>,
}

/// Per-tick knobs the fallback policy may override.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssemblyFlags {
    pub zmp_shrink: f64,
    pub force_slack: bool,
}

pub fn assemble(
    model: &RobotModel,
    state: &State,
    tasks: &[TaskSpec],
    contacts: &[ActiveContact],
    barriers: &[&BarrierSpec],
    options: &ControllerOptions,
) -> Result<Assembly> {
    let flags = AssemblyFlags { zmp_shrink: options.zmp_shrink, force_slack: false };
    assemble_with(model, state, tasks, contacts, barriers, options, flags)
}

pub fn assemble_with(
    model: &RobotModel,
    state: &State,
    tasks: &[TaskSpec],
    contacts: &[ActiveContact],
    barriers: &[&BarrierSpec],
    options: &ControllerOptions,
    flags: AssemblyFlags,
) -> Result<Assembly> {
    state.validate(model)?;
    let kin = Kinematics::new(model, &state.q, Some(&state.qdot));
    let mass = mass_matrix_from(model, &kin);
    let bias = inverse_dynamics_from(model, &kin, &state.qdot, None, true);
    let actuation = model.actuation_matrix();
    let welded = welded(contacts);
    let cons = constraint_rows(model, &kin, &state.qdot, &welded)?;
    let stack = stack_tasks(tasks, model, &kin, state.t)?;

    let mut barrier_rows = Vec::with_capacity(barriers.len());
    for spec in barriers {
        let eval = spec.evaluate(model, &kin)?;
        let st = aecbf_row(spec, &eval)?;
        barrier_rows.push(BarrierRow { name: spec.name.clone(), eval, state: st, slack: spec.slack || flags.force_slack });
    }

    let n = model.n();
    let m = model.m();
    let n_loops = model.loops().len();
    let n_contact: usize = contacts.iter().map(|c| c.spec.dim()).sum();
    let n_slack = barrier_rows.iter().filter(|b| b.slack).count();
    let layout = VariableLayout { n, m, loops: n_loops, contact: n_contact, slack: n_slack };
    let nx = layout.len();
    let nh = layout.lambda_len();

    // Cost: ‖W^{1/2}(J_y q̈ + J̇_y q̇ − y*)‖² + XᵀΓX + w_s ‖s‖².
    let mut h = DMatrix::zeros(nx, nx);
    let mut g = DVector::zeros(nx);
    let jw = DMatrix::from_fn(stack.rows(), n, |i, j| stack.jacobian[(i, j)] * stack.weights[i]);
    let hq = stack.jacobian.transpose() * &jw * 2.0;
    h.view_mut((0, 0), (n, n)).copy_from(&hq);
    let resid = &stack.jdot_qdot - &stack.y_star;
    g.rows_mut(0, n).copy_from(&(jw.transpose() * resid * 2.0));
    let reg = options.regularization;
    for i in 0..nx {
        let gamma = if i < layout.u() {
            reg.qddot
        } else if i < layout.lambda() {
            reg.torque
        } else if i < layout.slack() {
            reg.wrench
        } else {
            options.slack_weight
        };
        h[(i, i)] += 2.0 * gamma;
    }

    // D_eq = [M, −B, −Jᵀ], b = −bias; C_eq = [J, 0, 0], b = −J̇q̇.
    for &k in &options.passive {
        if k >= m {
            return Err(Error::Dimension { context: "passive actuator index", expected: m, actual: k });
        }
    }
    let np = options.passive.len();
    let mut a_eq = DMatrix::zeros(n + nh + np, nx);
    let mut b_eq = DVector::zeros(n + nh + np);
    a_eq.view_mut((0, 0), (n, n)).copy_from(&mass);
    a_eq.view_mut((0, layout.u()), (n, m)).copy_from(&(-&actuation));
    a_eq.view_mut((0, layout.lambda()), (n, nh)).copy_from(&(-cons.jacobian.transpose()));
    b_eq.rows_mut(0, n).copy_from(&(-&bias));
    a_eq.view_mut((n, 0), (nh, n)).copy_from(&cons.jacobian);
    b_eq.rows_mut(n, nh).copy_from(&(-&cons.jdot_qdot));
    for (r, &k) in options.passive.iter().enumerate() {
        a_eq[(n + nh + r, layout.u() + k)] = 1.0;
    }

    // Inequalities, one family at a time.
    let mut rows_a: Vec<DVector<f64>> = Vec::new();
    let mut rows_b: Vec<f64> = Vec::new();
    let mut map = RowMap::default();
    let push = |rows_a: &mut Vec<DVector<f64>>, rows_b: &mut Vec<f64>, row: DVector<f64>, b: f64| {
        rows_a.push(row);
        rows_b.push(b);
    };

    let start = rows_a.len();
    if options.torque_limits {
        let limits = model.torque_limits();
        for k in 0..m {
            if limits[k].is_finite() {
                for sign in [1.0, -1.0] {
                    let mut row = DVector::zeros(nx);
                    row[layout.u() + k] = sign;
                    push(&mut rows_a, &mut rows_b, row, limits[k]);
                }
            }
        }
    }
    map.torque = start..rows_a.len();

    let start = rows_a.len();
    if options.friction {
        let mut c0 = layout.contact_lambda();
        for c in contacts {
            let (a, b) = friction_rows_with(&c.spec, options.min_normal_force);
            for r in 0..a.nrows() {
                let mut row = DVector::zeros(nx);
                row.rows_mut(c0, c.spec.dim()).copy_from(&a.row(r).transpose());
                push(&mut rows_a, &mut rows_b, row, b[r]);
            }
            c0 += c.spec.dim();
        }
    }
    map.friction = start..rows_a.len();

    let poses: Vec<FramePose> = contacts
        .iter()
        .map(|c| kin.frame_pose(model, c.frame))
        .collect::<Result<_>>()?;
    let specs: Vec<ContactSpec> = contacts.iter().map(|c| c.spec.clone()).collect();
    let wmap = wrench_map(&poses, &specs);
    let polygon = if contacts.is_empty() { None } else { Some(support_polygon_from_poses(&poses, &specs)?) };
    let start = rows_a.len();
    if let (true, Some(poly)) = (options.zmp, &polygon) {
        if !poly.is_degenerate() {
            let zr = zmp_rows(&wmap, poly, flags.zmp_shrink);
            for r in 0..zr.nrows() {
                let mut row = DVector::zeros(nx);
                row.rows_mut(layout.contact_lambda(), n_contact).copy_from(&zr.row(r).transpose());
                push(&mut rows_a, &mut rows_b, row, 0.0);
            }
        }
    }
    map.zmp = start..rows_a.len();

    // row·q̈ + s ≥ rhs  ⇔  −row·q̈ − s ≤ −rhs.
    let start = rows_a.len();
    let mut s_idx = layout.slack();
    let mut slack_cols = Vec::new();
    for b in &barrier_rows {
        let mut row = DVector::zeros(nx);
        row.rows_mut(0, n).copy_from(&(-b.state.row.transpose()));
        if b.slack {
            row[s_idx] = -1.0;
            slack_cols.push(s_idx);
            s_idx += 1;
        }
        push(&mut rows_a, &mut rows_b, row, -b.state.rhs);
    }
    map.barrier = start..rows_a.len();
    let start = rows_a.len();
    for col in slack_cols {
        let mut row = DVector::zeros(nx);
        row[col] = -1.0;
        push(&mut rows_a, &mut rows_b, row, 0.0);
    }
    map.slack = start..rows_a.len();

    let mut a_in = DMatrix::zeros(rows_a.len(), nx);
    for (r, row) in rows_a.iter().enumerate() {
        a_in.row_mut(r).copy_from(&row.transpose());
    }
    let b_in = DVector::from_vec(rows_b);

    Ok(Assembly {
        problem: QpProblem { h, g, a_eq, b_eq, a_in, b_in },
        layout,
        rows: map,
        mass,
        bias,
        actuation,
        constraints: cons,
        tasks: stack,
        barriers: barrier_rows,
        polygon,
        wrench_map: wmap,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fallback {
    None,
    /// Re-solved with barrier slacks on and no ZMP shrink.
    Relaxed,
    /// Both solves failed; previous torques held.
    HoldPrevious,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Incident {
    pub t: f64,
    pub kind: String,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct Diagnostics {
    pub task_errors: Vec<DVector<f64>>,
    pub barrier_h: Vec<f64>,
    pub barrier_eta: Vec<DVector<f64>>,
    pub zmp: Option<Vector2<f64>>,
    /// Distance of the ZMP inside the unshrunk polygon.
    pub zmp_margin: Option<f64>,
    /// Smallest `b − a·λ` over the friction rows.
    pub friction_margin: Option<f64>,
    pub slack: DVector<f64>,
    pub rank_deficient: bool,
}

#[derive(Debug, Clone)]
pub struct ControlOutput {
    pub u: DVector<f64>,
    pub qddot: DVector<f64>,
    pub lambda: DVector<f64>,
    pub solution: QpSolution,
    pub assembly: Assembly,
    pub fallback: Fallback,
    pub diagnostics: Diagnostics,
}

/// Per-loop controller state: warm start, held torques and the incident log.
#[derive(Debug, Clone)]
pub struct Controller {
    pub options: ControllerOptions,
    previous: Option<DVector<f64>>,
    previous_u: Option<DVector<f64>>,
    pub incidents: Vec<Incident>,
}

impl Controller {
    pub fn new(options: ControllerOptions) -> Self {
        Controller { options, previous: None, previous_u: None, incidents: Vec::new() }
    }

    /// Forget the warm start, e.g. after a contact switch changes the layout.
    pub fn reset_warm_start(&mut self) {
        self.previous = None;
    }

    fn log(&mut self, t: f64, kind: &str, detail: String) {
        self.incidents.push(Incident { t, kind: kind.into(), detail });
    }

    pub fn control_step(
        &mut self,
        model: &RobotModel,
        state: &State,
        tasks: &[TaskSpec],
        contacts: &[ActiveContact],
        barriers: &[&BarrierSpec],
    ) -> Result<ControlOutput> {
        let flags = AssemblyFlags { zmp_shrink: self.options.zmp_shrink, force_slack: false };
        let mut assembly = assemble_with(model, state, tasks, contacts, barriers, &self.options, flags)?;
        let warm = self.previous.as_ref().filter(|x| x.len() == assembly.layout.len());
        let mut solution = qp::solve_with(&assembly.problem, warm, &self.options.qp)?;
        let mut fallback = Fallback::None;
        if !solution.is_optimal() {
            self.log(
                state.t,
                "qp-relaxed",
                format!("status {:?}, row {:?}; re-solving with slacks and no zmp shrink", solution.status, solution.most_violated),
            );
            let relaxed = AssemblyFlags { zmp_shrink: 0.0, force_slack: true };
            assembly = assemble_with(model, state, tasks, contacts, barriers, &self.options, relaxed)?;
            solution = qp::solve_with(&assembly.problem, None, &self.options.qp)?;
            fallback = Fallback::Relaxed;
        }
        let layout = assembly.layout;
        if !solution.is_optimal() {
            fallback = Fallback::HoldPrevious;
            self.log(state.t, "torque-held", format!("relaxed solve status {:?}", solution.status));
            let u = self.previous_u.clone().unwrap_or_else(|| DVector::zeros(layout.m));
            let diagnostics = diagnose(&assembly, &solution, &self.options);
            return Ok(ControlOutput {
                u,
                qddot: DVector::from_element(layout.n, f64::NAN),
                lambda: DVector::from_element(layout.lambda_len(), f64::NAN),
                solution,
                assembly,
                fallback,
                diagnostics,
            });
        }
        if !solution.redundant_equalities.is_empty() && !self.incidents.iter().any(|i| i.kind == "rank-deficient") {
            self.log(state.t, "rank-deficient", format!("{} redundant constraint rows", solution.redundant_equalities.len()));
        }
        let x = &solution.x;
        let u = x.rows(layout.u(), layout.m).into_owned();
        let diagnostics = diagnose(&assembly, &solution, &self.options);
        for (k, b) in assembly.barriers.iter().filter(|b| b.slack).enumerate() {
            if diagnostics.slack[k] > 1e-9 {
                self.log(state.t, "barrier-slack", format!("{} relaxed by {:.3e}", b.name, diagnostics.slack[k]));
            }
        }
        self.previous = Some(x.clone());
        self.previous_u = Some(u.clone());
        Ok(ControlOutput {
            u,
            qddot: x.rows(0, layout.n).into_owned(),
            lambda: x.rows(layout.lambda(), layout.lambda_len()).into_owned(),
            solution,
            assembly,
            fallback,
            diagnostics,
        })
    }
}

fn diagnose(assembly: &Assembly, solution: &QpSolution, options: &ControllerOptions) -> Diagnostics {
    let layout = assembly.layout;
    let x = &solution.x;
    let lambda_c = x.rows(layout.contact_lambda(), layout.contact).into_owned();
    let mut zmp = None;
    let mut zmp_margin = None;
    if layout.contact > 0 && solution.status == QpStatus::Optimal {
        let w = &assembly.wrench_map * &lambda_c;
        if let Ok(p) = zmp_with(&w, options.min_normal_force * 0.5) {
            zmp = Some(p);
            zmp_margin = assembly.polygon.as_ref().filter(|poly| !poly.is_degenerate()).map(|poly| poly.margin(&p));
        }
    }
    let friction_margin = (!assembly.rows.friction.is_empty()).then(|| {
        assembly
            .rows
            .friction
            .clone()
            .map(|r| assembly.problem.b_in[r] - (assembly.problem.a_in.row(r) * x)[0])
            .fold(f64::INFINITY, f64::min)
    });
    Diagnostics {
        task_errors: assembly.tasks.evals.iter().map(|e| e.error.clone()).collect(),
        barrier_h: assembly.barriers.iter().map(|b| b.eval.h).collect(),
        barrier_eta: assembly.barriers.iter().map(|b| b.state.eta.clone()).collect(),
        zmp,
        zmp_margin,
        friction_margin,
        slack: x.rows(layout.slack(), layout.slack).into_owned(),
        rank_deficient: !solution.redundant_equalities.is_empty(),
    }
}

/// Dynamics residual `‖M q̈ + bias − B u − Jᵀ λ‖∞` of a solution.
pub fn dynamics_residual(assembly: &Assembly, x: &DVector<f64>) -> f64 {
    let l = assembly.layout;
    let qdd = x.rows(0, l.n);
    let u = x.rows(l.u(), l.m);
    let lam = x.rows(l.lambda(), l.lambda_len());
    (&assembly.mass * qdd + &assembly.bias - &assembly.actuation * u - assembly.constraints.jacobian.transpose() * lam)
        .amax()
}

/// Constraint residual `‖J q̈ + J̇ q̇‖∞` of a solution.
pub fn constraint_residual(assembly: &Assembly, x: &DVector<f64>) -> f64 {
    if assembly.constraints.is_empty() {
        return 0.0;
    }
    (&assembly.constraints.jacobian * x.rows(0, assembly.layout.n) + &assembly.constraints.jdot_qdot).amax()
}
