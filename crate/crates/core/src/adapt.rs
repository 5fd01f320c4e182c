//! Online adaptation in a held-out environment: a short probe infers the
//! environment embedding, gradient ascent moves the policy embedding against
//! the frozen value function (no further interaction), and periodic decoded
//! evaluations track the best embedding found.

use rand::Rng;

use crate::collect::{evaluate, Policy};
use crate::env::EnvInstance;
use crate::error::{ensure_finite, Error, Result};
use crate::pdvf::{PdvfModel, QuadraticPdvf};
use crate::repr::EncoderBundle;
use crate::rng::{normal_vec, stream, Stream};
use crate::store::Transition;

/// Where the ascent starts: a random vector on the embedding scale (the
/// default), or the probe's own policy embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMode {
    Random,
    FromProbePolicy,
}

#[derive(Clone, Debug)]
pub struct AdaptationConfig {
    pub probe_steps: usize,
    pub ga_steps: usize,
    pub eta: f64,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub init_mode: InitMode,
    /// Norm given to the random initial embedding; callers pass the mean
    /// policy-embedding norm of the training bank so the start point lies
    /// on the scale the decoder and value function were trained on.
    pub init_scale: f64,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        AdaptationConfig {
            probe_steps: 50,
            ga_steps: 100,
            eta: 5e-3,
            eval_every: 1,
            eval_episodes: 5,
            init_mode: InitMode::Random,
            init_scale: 1.0,
        }
    }
}

impl AdaptationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ga_steps == 0 {
            return Err(Error::contract("adaptation needs at least one ascent step"));
        }
        if self.eval_every == 0 {
            return Err(Error::contract("evaluation cadence must be at least 1"));
        }
        if !(self.eta > 0.0) {
            return Err(Error::contract("ascent step size must be positive"));
        }
        if self.eval_episodes == 0 {
            return Err(Error::contract("evaluations need at least one episode"));
        }
        Ok(())
    }
}

/// A policy embedding decoded into an executable deterministic policy:
/// a(s) = clip(dec(s ⊕ z_π)).
pub struct DecodedPolicy<'a> {
    pub encoders: &'a EncoderBundle,
    pub z_pi: Vec<f64>,
    pub action_bound: f64,
}

impl Policy for DecodedPolicy<'_> {
    fn act(&self, s: &[f64], _rng: &mut Stream) -> Vec<f64> {
        self.encoders
            .decode_action(s, &self.z_pi)
            .into_iter()
            .map(|x| x.clamp(-self.action_bound, self.action_bound))
            .collect()
    }
}

/// The probe interaction: its transitions, the inferred environment
/// embedding, and the probe policy's own embedding (one possible start).
#[derive(Clone, Debug)]
pub struct Probe {
    pub transitions: Vec<Transition>,
    pub z_e: Vec<f64>,
    pub z_pi_probe: Vec<f64>,
}

/// Collects exactly `probe_steps` transitions, spanning episode boundaries
/// and truncating mid-episode so the step counter advances by exactly
/// `probe_steps`.
pub fn collect_probe(
    env: &EnvInstance,
    policy: &dyn Policy,
    probe_steps: usize,
    rng: &mut Stream,
    steps: &mut u64,
) -> Result<Vec<Transition>> {
    if probe_steps == 0 {
        return Err(Error::contract("probe needs at least one step"));
    }
    let mut out = Vec::with_capacity(probe_steps);
    'probe: loop {
        let mut s = env.reset(rng);
        for t in 0..env.horizon() {
            let a = policy.act(&s, rng);
            let o = env.step(&s, &a, t)?;
            *steps += 1;
            out.push(Transition { s, a, r: o.reward, s_next: o.next.clone(), done: o.done });
            s = o.next;
            if out.len() == probe_steps {
                break 'probe;
            }
            if o.done {
                break;
            }
        }
    }
    Ok(out)
}

/// Probes the test environment and embeds what it saw. The probe's full
/// transition set is the context window, so it must be at least `n_ctx`
/// long — the context size the encoder was trained with.
pub fn probe_and_infer(
    env: &EnvInstance,
    probe_policy: &dyn Policy,
    encoders: &EncoderBundle,
    cfg: &AdaptationConfig,
    n_ctx: usize,
    rng: &mut Stream,
    steps: &mut u64,
) -> Result<Probe> {
    if cfg.probe_steps < n_ctx {
        return Err(Error::contract(format!(
            "probe of {} steps is shorter than the {n_ctx}-tuple context window",
            cfg.probe_steps
        )));
    }
    let transitions = collect_probe(env, probe_policy, cfg.probe_steps, rng, steps)?;
    let z_e = encoders.embed_env(&transitions);
    ensure_finite(&z_e, "probe environment embedding")?;
    let pairs: Vec<(Vec<f64>, Vec<f64>)> =
        transitions.iter().map(|t| (t.s.clone(), t.a.clone())).collect();
    let z_pi_probe = encoders.embed_policy(&pairs);
    ensure_finite(&z_pi_probe, "probe policy embedding")?;
    Ok(Probe { transitions, z_e, z_pi_probe })
}

/// One ascent step: z′ = z + η·∇_z mean_s V(s, z_e, z), states averaged over
/// the probe.
pub fn ga_step(
    model: &PdvfModel,
    probe_states: &[Vec<f64>],
    z_e: &[f64],
    z_pi: &[f64],
    eta: f64,
) -> Result<Vec<f64>> {
    let (_, g) = model.value_and_grad_zpi(probe_states, z_e, z_pi)?;
    let next: Vec<f64> = z_pi.iter().zip(&g).map(|(z, gi)| z + eta * gi).collect();
    ensure_finite(&next, "ascended policy embedding")?;
    Ok(next)
}

/// One decoded evaluation at ascent step `step`.
#[derive(Clone, Debug)]
pub struct EvalRow {
    pub step: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub best_so_far: f64,
    pub z_pi: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct AdaptationReport {
    pub rows: Vec<EvalRow>,
    pub best_step: usize,
    pub best_return: f64,
    pub best_z_pi: Vec<f64>,
    pub z_e: Vec<f64>,
    pub z_pi_init: Vec<f64>,
    /// Exact environment interaction: probe_steps plus evaluation rollouts.
    pub env_steps: u64,
    pub n_evals: usize,
    /// min over taken steps of η·‖∇‖² — nonnegative iff every step pointed
    /// uphill on the surrogate.
    pub min_directional_derivative: f64,
}

fn finish_report(
    mut rows: Vec<EvalRow>,
    z_e: Vec<f64>,
    z_pi_init: Vec<f64>,
    env_steps: u64,
    min_dd: f64,
) -> Result<AdaptationReport> {
    if rows.is_empty() {
        return Err(Error::contract("adaptation produced no evaluation rows"));
    }
    let mut running = f64::NEG_INFINITY;
    for row in rows.iter_mut() {
        running = running.max(row.mean_return);
        row.best_so_far = running;
    }
    let n_evals = rows.len();
    let best_row = rows
        .iter()
        .enumerate()
        .max_by(|(ja, a), (jb, b)| {
            a.mean_return
                .partial_cmp(&b.mean_return)
                .unwrap()
                .then(jb.cmp(ja)) // first max wins ties
        })
        .map(|(j, _)| j)
        .unwrap();
    Ok(AdaptationReport {
        best_step: rows[best_row].step,
        best_return: rows[best_row].mean_return,
        best_z_pi: rows[best_row].z_pi.clone(),
        z_e,
        z_pi_init,
        env_steps,
        n_evals,
        min_directional_derivative: min_dd,
        rows,
    })
}

/// Starting embedding per the configured mode.
fn initial_embedding(
    cfg: &AdaptationConfig,
    probe: &Probe,
    d: usize,
    seed: u64,
    coords: &[u64],
) -> Vec<f64> {
    match cfg.init_mode {
        InitMode::FromProbePolicy => probe.z_pi_probe.clone(),
        InitMode::Random => {
            let mut rng = stream(seed, "adapt-init", coords);
            let v = normal_vec(&mut rng, d);
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.iter().map(|x| x / n * cfg.init_scale).collect()
        }
    }
}

/// Full adaptation run: probe once, ascend `ga_steps` times, decode and
/// evaluate every `eval_every` steps (and always at the final step). The
/// ascent itself touches the environment only through the recorded
/// evaluations, so total interaction is
/// `probe_steps + eval_episodes · (episode lengths) · n_evals`.
#[allow(clippy::too_many_arguments)]
pub fn adapt(
    env: &EnvInstance,
    encoders: &EncoderBundle,
    model: &PdvfModel,
    probe_policy: &dyn Policy,
    cfg: &AdaptationConfig,
    n_ctx: usize,
    seed: u64,
    coords: &[u64],
) -> Result<AdaptationReport> {
    cfg.validate()?;
    let mut steps: u64 = 0;
    let mut probe_rng = stream(seed, "adapt-probe", coords);
    let probe = probe_and_infer(env, probe_policy, encoders, cfg, n_ctx, &mut probe_rng, &mut steps)?;
    let probe_states: Vec<Vec<f64>> = probe.transitions.iter().map(|t| t.s.clone()).collect();

    let z_init = initial_embedding(cfg, &probe, model.d, seed, coords);
    let mut z = z_init.clone();
    let mut rows = Vec::new();
    let mut min_dd = f64::INFINITY;
    for t in 1..=cfg.ga_steps {
        let (_, g) = model.value_and_grad_zpi(&probe_states, &probe.z_e, &z)?;
        let dd = cfg.eta * g.iter().map(|x| x * x).sum::<f64>();
        min_dd = min_dd.min(dd);
        for (zi, gi) in z.iter_mut().zip(&g) {
            *zi += cfg.eta * gi;
        }
        ensure_finite(&z, "ascended policy embedding")?;
        if t % cfg.eval_every == 0 || t == cfg.ga_steps {
            let policy =
                DecodedPolicy { encoders, z_pi: z.clone(), action_bound: env.action_bound() };
            let mut eval_rng = stream(seed, "adapt-eval", &[coords, &[t as u64]].concat());
            let (mean, std) =
                evaluate(env, &policy, cfg.eval_episodes, &mut eval_rng, &mut steps)?;
            rows.push(EvalRow {
                step: t,
                mean_return: mean,
                std_return: std,
                best_so_far: f64::NAN,
                z_pi: z.clone(),
            });
        }
    }
    finish_report(rows, probe.z_e, z_init, steps, min_dd)
}

/// The closed-form variant: probe, then jump directly to the quadratic
/// model's eigenvector argmax (rescaled to the training embedding norm) and
/// evaluate once. No ascent, so the single row is recorded at step 0.
pub fn adapt_closed_form(
    env: &EnvInstance,
    encoders: &EncoderBundle,
    model: &QuadraticPdvf,
    probe_policy: &dyn Policy,
    cfg: &AdaptationConfig,
    n_ctx: usize,
    seed: u64,
    coords: &[u64],
) -> Result<AdaptationReport> {
    if cfg.eval_episodes == 0 {
        return Err(Error::contract("evaluations need at least one episode"));
    }
    let mut steps: u64 = 0;
    let mut probe_rng = stream(seed, "adapt-probe", coords);
    let probe = probe_and_infer(env, probe_policy, encoders, cfg, n_ctx, &mut probe_rng, &mut steps)?;
    let probe_states: Vec<Vec<f64>> = probe.transitions.iter().map(|t| t.s.clone()).collect();
    let (unit, _) = model.argmax(&probe_states, &probe.z_e)?;
    let z: Vec<f64> = unit.iter().map(|x| x * model.mean_policy_norm).collect();
    let policy = DecodedPolicy { encoders, z_pi: z.clone(), action_bound: env.action_bound() };
    let mut eval_rng = stream(seed, "adapt-eval", &[coords, &[0]].concat());
    let (mean, std) = evaluate(env, &policy, cfg.eval_episodes, &mut eval_rng, &mut steps)?;
    let rows = vec![EvalRow {
        step: 0,
        mean_return: mean,
        std_return: std,
        best_so_far: mean,
        z_pi: z.clone(),
    }];
    finish_report(rows, probe.z_e, z, steps, 0.0)
}

/// Draws a probe-policy index uniformly from the training columns.
pub fn draw_probe_index(n_policies: usize, seed: u64, coords: &[u64]) -> usize {
    let mut rng = stream(seed, "adapt-probe-pick", coords);
    rng.gen_range(0..n_policies)
}
