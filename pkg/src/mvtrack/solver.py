"""Joint multi-view Gauss-Newton pose estimation in the object-centered frame.

Per frame the object frame is re-based on the previous pose (origin at the
model bbox center, axes of the template) and held fixed through the frame's
iterations. Each round re-renders the level set and rebuilds samples and
color models; each iteration inside a round accumulates the normal equations
over all views, solves for one twist increment, and maps it back to every
camera by conjugation.

Between re-renders the round-start level set is evaluated at backward-warped
positions: when the attached surface point's projection moves by d, the level
set value at a fixed pixel p is approximately the round-start field at p - d.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg as sla

from .camera import CameraView
from .energy import (
    DegenerateRegionError,
    EnergyConfig,
    FrameObservation,
    bilinear,
    bilinear_gradient,
    build_observation,
    in_gradient_domain,
    smoothed_heaviside,
    smoothed_heaviside_deriv,
)
from .geometry import RigidTransform, Twist, compose, exp_se3, invert
from .mesh import TriangleMesh
from .metrics import rotation_error
from .renderer import render


class SingularSystemError(RuntimeError):
    """Normal equations could not be factorized even with maximum damping."""


class EmptySampleSetError(RuntimeError):
    """Every sample of a view was skipped (behind camera or off the border)."""


class LostTrackError(RuntimeError):
    """Tracking failed for a frame beyond recovery."""


@dataclass(frozen=True)
class SolverConfig:
    rounds: int = 1                    # tracking quality; 5 for annotation quality
    iterations_per_round: int = 7
    damping_init: float = 0.0
    damping_min: float = 1e-4
    damping_max: float = 1e6
    damping_step: float = 10.0
    residual_mode: str = "unit"        # "unit": step from J alone; "energy": weight by F
    divergence_rounds: int = 3
    max_backtracks: int = 6            # step halvings before an increment is rejected
    # frames whose first-round energy improves by less than this relative
    # amount keep the incoming pose: re-render quantization jitter otherwise
    # walks a static scene around at the 0.03 mm / frame scale
    min_relative_improvement: float = 1e-4

    def __post_init__(self):
        if self.rounds < 1 or self.iterations_per_round < 1:
            raise ValueError("iteration schedule must be at least 1x1")
        if self.residual_mode not in ("unit", "energy"):
            raise ValueError("residual_mode must be 'unit' or 'energy'")
        if self.max_backtracks < 0:
            raise ValueError("max_backtracks must be non-negative")


@dataclass
class NormalEquations:
    """Accumulators H = sum JtJ and g = gradient of the total energy."""

    H: np.ndarray
    g: np.ndarray

    @staticmethod
    def zero() -> "NormalEquations":
        return NormalEquations(np.zeros((6, 6)), np.zeros(6))


@dataclass(frozen=True)
class TrackerState:
    """Per-frame tracker state.

    camera_from_template entries are always derived from the single latent
    object_from_template, so the per-view poses stay exactly consistent.
    """

    object_from_template: RigidTransform
    object_from_camera: tuple[RigidTransform, ...]
    camera_from_template: tuple[RigidTransform, ...]
    rounds: int
    iterations_per_round: int
    lost: bool = False


@dataclass
class ViewTally:
    used: int = 0
    skipped_behind: int = 0
    skipped_border: int = 0
    energy: float = 0.0


@dataclass
class FrameReport:
    energy_trace: list          # per round: list of per-iteration mean sample energies
    used_samples: int
    skipped_behind: int
    skipped_border: int
    lost: bool
    lost_reason: str | None
    converged: bool
    damping_final: float


@dataclass
class SequenceTrackResult:
    predicted: list              # world_from_template per frame (as tracked, pre-reset)
    reports: list
    resets: list                 # frame indices where the pose was reset / marked lost
    final_pose: RigidTransform
    final_models: list


def make_tracker_state(
    camera_from_template,
    mesh: TriangleMesh,
    rounds: int = 1,
    iterations_per_round: int = 7,
) -> TrackerState:
    """Re-base the object-centered frame on the given pose: origin at the mesh
    bbox center, axes aligned with the template frame."""
    cams = tuple(camera_from_template)
    if not cams:
        raise ValueError("at least one view is required")
    o_from_t = RigidTransform(np.eye(3), -mesh.bbox_center)
    o_from_c = tuple(compose(o_from_t, invert(c)) for c in cams)
    derived = tuple(compose(invert(o), o_from_t) for o in o_from_c)
    return TrackerState(o_from_t, o_from_c, derived, rounds, iterations_per_round)


def apply_increment(state: TrackerState, dxi: Twist) -> TrackerState:
    """Left-multiply the latent pose by exp(dxi) and re-derive every per-view
    pose from it (equivalent to conjugating the camera poses)."""
    latent = compose(exp_se3(dxi), state.object_from_template)
    cams = tuple(compose(invert(o), latent) for o in state.object_from_camera)
    return replace(state, object_from_template=latent, camera_from_template=cams)


@dataclass
class _SampleTerms:
    """Per-sample quantities shared by the energy and the Jacobian pass."""

    pos: np.ndarray        # warped level-set query positions (M, 2)
    phi: np.ndarray        # offset-corrected level-set values (M,)
    p_fg: np.ndarray
    p_bg: np.ndarray
    used: np.ndarray       # indices into the observation's sample arrays
    cam: np.ndarray        # camera-frame points (M, 3)
    skipped_behind: int
    skipped_border: int


def _sample_terms(
    obs: FrameObservation, view: CameraView, state: TrackerState, cfg: EnergyConfig
) -> _SampleTerms:
    """Project the attached points under the current pose and query the
    round-start level set at the backward-warped fixed-pixel positions."""
    n = len(obs.samples)
    if n == 0:
        raise EmptySampleSetError(f"view {obs.view_index}: no band samples")
    cam_from_tpl = compose(invert(view.object_from_camera), state.object_from_template)
    pc = cam_from_tpl.apply(obs.samples.model_points)
    infront = pc[:, 2] > 0.0
    skipped_behind = int(n - infront.sum())
    if not infront.any():
        raise EmptySampleSetError(f"view {obs.view_index}: all samples behind the camera")
    idx = np.nonzero(infront)[0]
    K = view.intrinsics
    pcf = pc[idx]
    zc = pcf[:, 2]
    q = np.stack(
        [
            (K.fx * pcf[:, 0] + K.cx * zc) / zc,
            (K.fy * pcf[:, 1] + K.cy * zc) / zc,
        ],
        axis=1,
    )
    warp = obs.base_pixels[idx] + obs.base_projections[idx] - q
    inb = in_gradient_domain(warp, obs.levelset.width, obs.levelset.height)
    skipped_border = int(inb.size - inb.sum())
    if not inb.any():
        raise EmptySampleSetError(f"view {obs.view_index}: all samples off the image")
    idx = idx[inb]
    pos = warp[inb]
    phi = bilinear(obs.levelset.phi, pos) + cfg.contour_offset_px
    return _SampleTerms(
        pos=pos,
        phi=phi,
        p_fg=obs.p_fg[idx],
        p_bg=obs.p_bg[idx],
        used=idx,
        cam=pcf[inb],
        skipped_behind=skipped_behind,
        skipped_border=skipped_border,
    )


def view_energy(
    obs: FrameObservation, view: CameraView, state: TrackerState, cfg: EnergyConfig
) -> tuple[float, int]:
    """Total sample energy of one view at the current pose (no Jacobians)."""
    t = _sample_terms(obs, view, state, cfg)
    he = smoothed_heaviside(t.phi, cfg.heaviside_slope)
    blend = he * t.p_fg + (1.0 - he) * t.p_bg
    return float(-np.log(blend).sum()), int(t.phi.shape[0])


def accumulate_view(
    obs: FrameObservation,
    view: CameraView,
    state: TrackerState,
    acc: NormalEquations,
    cfg: EnergyConfig,
    residual_mode: str = "unit",
) -> ViewTally:
    """Add one view's samples to the normal equations.

    Samples behind the camera or whose warped position leaves the gradient
    domain are skipped and counted. Raises EmptySampleSetError if nothing
    remains.
    """
    t = _sample_terms(obs, view, state, cfg)
    tally = ViewTally(skipped_behind=t.skipped_behind, skipped_border=t.skipped_border)

    slope = cfg.heaviside_slope
    grad = bilinear_gradient(obs.levelset.phi, t.pos)
    he = smoothed_heaviside(t.phi, slope)
    blend = he * t.p_fg + (1.0 - he) * t.p_bg
    energies = -np.log(blend)
    dfdphi = -(t.p_fg - t.p_bg) * smoothed_heaviside_deriv(t.phi, slope) / blend
    dfdx = dfdphi[:, None] * grad

    K = view.intrinsics
    zc = t.cam[:, 2]
    a, b = t.cam[:, 0], t.cam[:, 1]
    r = invert(view.object_from_camera).rotation
    inv_c2 = 1.0 / (zc * zc)
    m = t.used.shape[0]
    jproj = np.empty((m, 2, 3))
    jproj[:, 0, :] = K.fx * (r[0][None, :] * zc[:, None] - a[:, None] * r[2][None, :]) * inv_c2[:, None]
    jproj[:, 1, :] = K.fy * (r[1][None, :] * zc[:, None] - b[:, None] * r[2][None, :]) * inv_c2[:, None]

    # [I | -skew(x)] point Jacobian folded in without materializing (N, 3, 6)
    x_obj = state.object_from_template.apply(obs.samples.model_points[t.used])
    jpix = np.empty((m, 2, 6))
    jpix[:, :, :3] = jproj
    px = x_obj[:, 0][:, None]
    py = x_obj[:, 1][:, None]
    pz = x_obj[:, 2][:, None]
    jpix[:, :, 3] = jproj[:, :, 1] * (-pz) + jproj[:, :, 2] * py
    jpix[:, :, 4] = jproj[:, :, 0] * pz + jproj[:, :, 2] * (-px)
    jpix[:, :, 5] = jproj[:, :, 0] * (-py) + jproj[:, :, 1] * px

    J = np.einsum("nk,nkj->nj", dfdx, jpix)
    weights = energies if residual_mode == "energy" else np.ones_like(energies)
    acc.H += J.T @ J
    # the level set at a fixed pixel moves opposite to the image motion of the
    # attached point, so the energy gradient is minus the weighted column sum
    acc.g -= (J * weights[:, None]).sum(axis=0)

    tally.used = int(m)
    tally.energy = float(energies.sum())
    return tally


def solve_step(acc: NormalEquations, damping: float = 0.0) -> Twist:
    """Solve (H + damping * diag(H)) dxi = -g by Cholesky factorization."""
    if not (np.all(np.isfinite(acc.H)) and np.all(np.isfinite(acc.g))):
        raise SingularSystemError("normal equations contain non-finite entries")
    if float(np.linalg.norm(acc.g)) == 0.0:
        return Twist.zero()
    A = acc.H + damping * np.diag(np.diag(acc.H))
    try:
        factor = sla.cho_factor(A, lower=True)
        x = sla.cho_solve(factor, -acc.g)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularSystemError(f"factorization failed: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("solution is not finite")
    return Twist.from_vector(x)


def joint_step(
    observations,
    views,
    state: TrackerState,
    cfg: EnergyConfig,
    damping: float = 0.0,
    residual_mode: str = "unit",
) -> tuple[Twist, list]:
    """One Gauss-Newton increment from all usable views."""
    acc = NormalEquations.zero()
    tallies = []
    for obs, view in zip(observations, views):
        if obs is None:
            tallies.append(None)
            continue
        tallies.append(accumulate_view(obs, view, state, acc, cfg, residual_mode))
    if all(t is None for t in tallies):
        raise EmptySampleSetError("no usable view")
    return solve_step(acc, damping), tallies


def monocular_step(
    obs: FrameObservation,
    view: CameraView,
    state: TrackerState,
    cfg: EnergyConfig,
    damping: float = 0.0,
    residual_mode: str = "unit",
) -> Twist:
    """Single-view object-centered update; the joint solve with N = 1 view."""
    acc = NormalEquations.zero()
    accumulate_view(obs, view, state, acc, cfg, residual_mode)
    return solve_step(acc, damping)


def _mean_energy(observations, views, state: TrackerState, cfg: EnergyConfig) -> float | None:
    """Mean per-sample energy over all usable views, None if nothing usable."""
    total = 0.0
    used = 0
    for obs, view in zip(observations, views):
        if obs is None:
            continue
        try:
            e, n = view_energy(obs, view, state, cfg)
        except EmptySampleSetError:
            continue
        total += e
        used += n
    return total / used if used else None


def _line_search(
    observations,
    views,
    state: TrackerState,
    energy_cfg: EnergyConfig,
    solver_cfg: SolverConfig,
    step: np.ndarray,
    e0: float,
    slope: float,
) -> float | None:
    """Step length along a Gauss-Newton increment.

    JtJ underestimates the energy curvature along weakly-observed directions,
    so the full step routinely overshoots; a single quadratic interpolation
    through (0, e0), the directional derivative, and the full-step energy
    finds the parabola minimum, with plain halving as the fall-back. Returns
    the accepted scale, or None when no evaluated scale decreases the energy.
    """

    def at(alpha: float) -> float | None:
        trial = apply_increment(state, Twist.from_vector(alpha * step))
        return _mean_energy(observations, views, trial, energy_cfg)

    best_alpha = None
    best_e = e0
    e1 = at(1.0)
    if e1 is not None and e1 < best_e:
        best_alpha, best_e = 1.0, e1
    if e1 is not None and slope < 0.0:
        denom = e1 - e0 - slope
        if denom > 0.0:
            alpha_q = float(np.clip(-slope / (2.0 * denom), 0.05, 4.0))
            eq = at(alpha_q)
            if eq is not None and eq < best_e:
                best_alpha, best_e = alpha_q, eq
    if best_alpha is None:
        alpha = 0.5
        for _ in range(solver_cfg.max_backtracks):
            ea = at(alpha)
            if ea is not None and ea < e0:
                return alpha
            alpha *= 0.5
        return None
    return best_alpha


def _raise_damping(lam: float, cfg: SolverConfig) -> float:
    return min(max(lam * cfg.damping_step, cfg.damping_min), cfg.damping_max)


def _lower_damping(lam: float, cfg: SolverConfig) -> float:
    lam = lam / cfg.damping_step
    return 0.0 if lam < cfg.damping_min else lam


def track_frame(
    state: TrackerState,
    images,
    mesh: TriangleMesh,
    views,
    energy_cfg: EnergyConfig,
    solver_cfg: SolverConfig,
    color_models=None,
):
    """Track one synchronized multi-view frame.

    Returns (state, FrameReport, color_models). The object frame is re-based
    on entry; per round the level set, band and color model of every view are
    rebuilt and iterations_per_round increments are applied.
    """
    n = len(views)
    if len(images) != n:
        raise ValueError("one image per view required")
    state = make_tracker_state(
        state.camera_from_template, mesh, solver_cfg.rounds, solver_cfg.iterations_per_round
    )
    entry_state = state
    frame_views = [
        replace(v, object_from_camera=state.object_from_camera[i]) for i, v in enumerate(views)
    ]
    models = list(color_models) if color_models is not None else [None] * n

    lam = solver_cfg.damping_init
    trace: list[list[float]] = []
    lost_reason: str | None = None
    converged = False
    divergent_rounds = 0
    prev_round_energy: float | None = None
    last_used = 0
    skipped_behind = 0
    skipped_border = 0

    for _ in range(solver_cfg.rounds):
        observations = []
        for i, view in enumerate(frame_views):
            rr = render(mesh, view, state.object_from_template)
            if not rr.mask.occupancy.any():
                observations.append(None)
                continue
            try:
                obs = build_observation(
                    images[i], rr, view, state.object_from_template, energy_cfg, models[i]
                )
            except DegenerateRegionError:
                observations.append(None)
                continue
            models[i] = obs.color_model
            observations.append(obs if len(obs.samples) else None)
        if all(o is None for o in observations):
            lost_reason = "no usable view"
            break

        energies: list[float] = []
        for _it in range(solver_cfg.iterations_per_round):
            acc = NormalEquations.zero()
            total_energy = 0.0
            used = behind = border = 0
            try:
                for i, obs in enumerate(observations):
                    if obs is None:
                        continue
                    tally = accumulate_view(
                        obs, frame_views[i], state, acc, energy_cfg,
                        solver_cfg.residual_mode,
                    )
                    total_energy += tally.energy
                    used += tally.used
                    behind += tally.skipped_behind
                    border += tally.skipped_border
            except EmptySampleSetError:
                used = 0
            if used == 0:
                lost_reason = "all samples skipped"
                break
            last_used, skipped_behind, skipped_border = used, behind, border
            mean_energy = total_energy / used
            energies.append(mean_energy)

            dxi = None
            while dxi is None:
                try:
                    dxi = solve_step(acc, lam)
                except SingularSystemError:
                    if lam >= solver_cfg.damping_max:
                        lost_reason = "singular normal equations"
                        break
                    lam = _raise_damping(lam, solver_cfg)
            if dxi is None:
                break

            step = dxi.as_vector()
            scale = _line_search(
                observations, frame_views, state, energy_cfg, solver_cfg,
                step, mean_energy, float(acc.g @ step) / used,
            )
            if scale is None:
                # no descent left along this round's surrogate: settle here
                converged = True
                break
            lam = _lower_damping(lam, solver_cfg)
            state = apply_increment(state, Twist.from_vector(scale * step))
            converged = float(np.linalg.norm(scale * step)) < 1e-6
            if converged:
                break
        if energies:
            trace.append(energies)
        if lost_reason is not None:
            break
        round_energy = energies[-1]
        if prev_round_energy is not None and round_energy > prev_round_energy:
            divergent_rounds += 1
            if divergent_rounds >= solver_cfg.divergence_rounds:
                lost_reason = "energy diverged"
                break
        else:
            divergent_rounds = 0
        prev_round_energy = round_energy

    lost = lost_reason is not None
    if not lost and trace:
        first = trace[0]
        gain = (first[0] - first[-1]) / max(abs(first[0]), 1e-12)
        if gain < solver_cfg.min_relative_improvement:
            # quantization jitter, not signal: keep the incoming pose
            state = entry_state
            converged = True
    state = replace(state, lost=lost)
    report = FrameReport(
        energy_trace=trace,
        used_samples=last_used,
        skipped_behind=skipped_behind,
        skipped_border=skipped_border,
        lost=lost,
        lost_reason=lost_reason,
        converged=converged,
        damping_final=lam,
    )
    return state, report, models


def track_sequence(
    initial_pose: RigidTransform,
    frame_images,
    views,
    mesh: TriangleMesh,
    energy_cfg: EnergyConfig,
    solver_cfg: SolverConfig,
    gt_poses=None,
    camera_poses=None,
    reset_rotation_deg: float = 5.0,
    reset_translation_mm: float = 50.0,
    initial_models=None,
) -> SequenceTrackResult:
    """Track a whole sequence, chaining the previous-frame pose as initializer.

    Poses are world_from_template, where "world" is the frame the rig
    extrinsics are expressed in (the object-centered frame of frame 0).
    With ground truth available, a frame whose rotation error exceeds
    reset_rotation_deg or translation error exceeds reset_translation_mm (or
    that the solver marked lost) counts as a reset: the failing frame keeps
    its tracked pose in the output, and the next frame starts from the ground
    truth. camera_poses optionally supplies per-frame world_from_camera lists
    for moving rigs.
    """
    n = len(views)
    static_cams = [v.object_from_camera for v in views]
    current = initial_pose
    models = list(initial_models) if initial_models is not None else [None] * n
    predicted = []
    reports = []
    resets = []
    for k, images in enumerate(frame_images):
        world_from_cam = camera_poses[k] if camera_poses is not None else static_cams
        cams_from_tpl = [compose(invert(w), current) for w in world_from_cam]
        state = make_tracker_state(
            cams_from_tpl, mesh, solver_cfg.rounds, solver_cfg.iterations_per_round
        )
        frame_views = [
            replace(v, object_from_camera=w) for v, w in zip(views, world_from_cam)
        ]
        state, report, models = track_frame(
            state, images, mesh, frame_views, energy_cfg, solver_cfg, models
        )
        current = compose(world_from_cam[0], state.camera_from_template[0])
        predicted.append(current)
        reports.append(report)
        if gt_poses is not None:
            gt = gt_poses[k]
            rot_err = rotation_error(current.rotation, gt.rotation)
            trans_err = float(np.linalg.norm(current.translation - gt.translation))
            if report.lost or rot_err > reset_rotation_deg or trans_err > reset_translation_mm:
                resets.append(k)
                current = gt
                models = [None] * n
        elif report.lost:
            resets.append(k)
    return SequenceTrackResult(predicted, reports, resets, current, models)
