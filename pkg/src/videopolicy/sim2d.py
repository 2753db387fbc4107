"""Deterministic 2D tabletop manipulation environment with pixel rendering.

Top-down world on the unit square. The agent is an overhead gripper: with
the gripper open it glides over everything; with it closed (and empty) it
shoves objects it contacts; closing the gripper while overlapping an object
grasps it, and the held object tracks the agent until released. Fixtures
are a pressable button and a sliding drawer whose handle can be dragged
while the gripper is closed.

The API is functional: ``step`` maps (state, action) to a fresh state, and
``render`` is a pure function of state, so replaying a stored action
sequence reproduces stored frames bit-exactly.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "VERBS",
    "COLOR_NAMES",
    "EnvConfig",
    "TaskSpec",
    "Action",
    "SimObject",
    "WorldState",
    "InstructionVocab",
    "Env",
    "InvalidTaskError",
]

VERBS = (
    "push_left",
    "push_right",
    "pick",
    "place_on",
    "press_button",
    "open_drawer",
    "close_drawer",
)

COLOR_NAMES = ("red", "green", "blue", "yellow", "purple", "cyan")
_COLOR_RGB = np.array(
    [
        [0.90, 0.20, 0.20],
        [0.20, 0.80, 0.25],
        [0.25, 0.40, 0.95],
        [0.95, 0.85, 0.20],
        [0.70, 0.25, 0.85],
        [0.20, 0.85, 0.85],
    ]
)


class InvalidTaskError(ValueError):
    """Raised when a task references colors/verbs the environment lacks."""


@dataclass(frozen=True)
class EnvConfig:
    frame_size: int = 64
    n_colors: int = 3
    horizon: int = 100
    delta_max: float = 0.05
    agent_radius: float = 0.055
    object_radius: float = 0.05
    grasp_radius: float = 0.08
    lift_line: float = 0.75
    push_zone: float = 0.14
    place_radius: float = 0.13
    button_pos: tuple[float, float] = (0.12, 0.88)
    button_radius: float = 0.05
    drawer_closed_x: float = 0.72
    drawer_travel: float = 0.22
    drawer_y: float = 0.92
    drawer_handle_radius: float = 0.055
    drawer_open_thresh: float = 0.8
    drawer_close_thresh: float = 0.2
    agent_color: tuple[float, float, float] = (0.95, 0.95, 0.95)

    @property
    def contact_dist(self) -> float:
        return self.agent_radius + self.object_radius


@dataclass(frozen=True)
class TaskSpec:
    verb: str
    target_color: int | None
    dest_color: int | None
    instruction_id: int


@dataclass(frozen=True)
class Action:
    """One control step: planar displacement plus gripper command."""

    delta: np.ndarray
    gripper_cmd: float

    def as_array(self) -> np.ndarray:
        return np.array([self.delta[0], self.delta[1], self.gripper_cmd], dtype=np.float64)

    @staticmethod
    def from_array(a: np.ndarray, delta_max: float) -> "Action":
        a = np.asarray(a, dtype=np.float64)
        delta = np.clip(a[:2], -delta_max, delta_max)
        return Action(delta=delta, gripper_cmd=float(np.clip(a[2], 0.0, 1.0)))

    @staticmethod
    def zero() -> "Action":
        return Action(delta=np.zeros(2), gripper_cmd=0.0)


@dataclass
class SimObject:
    shape: str  # "block" or "ball"
    color: int
    pos: np.ndarray
    held: bool = False


@dataclass
class WorldState:
    agent_pos: np.ndarray
    gripper: float
    objects: list[SimObject]
    button_pressed: bool
    drawer_ext: float
    step_count: int

    def copy(self) -> "WorldState":
        return WorldState(
            agent_pos=self.agent_pos.copy(),
            gripper=self.gripper,
            objects=[dataclasses.replace(o, pos=o.pos.copy()) for o in self.objects],
            button_pressed=self.button_pressed,
            drawer_ext=self.drawer_ext,
            step_count=self.step_count,
        )

    def object_of_color(self, color: int) -> SimObject:
        for o in self.objects:
            if o.color == color:
                return o
        raise InvalidTaskError(f"no object of color id {color} in scene")


def _object_shape(color: int) -> str:
    return "block" if color % 2 == 0 else "ball"


class InstructionVocab:
    """Fixed bijection between (verb, colors) tuples and instruction ids."""

    def __init__(self, n_colors: int = 3):
        if not 1 <= n_colors <= len(COLOR_NAMES):
            raise InvalidTaskError(f"n_colors must be in [1, {len(COLOR_NAMES)}]")
        self.n_colors = n_colors
        self._entries: list[tuple[str, int | None, int | None]] = []
        for verb in ("push_left", "push_right", "pick"):
            for c in range(n_colors):
                self._entries.append((verb, c, None))
        for c in range(n_colors):
            for d in range(n_colors):
                if c != d:
                    self._entries.append(("place_on", c, d))
        self._entries.append(("press_button", None, None))
        self._entries.append(("open_drawer", None, None))
        self._entries.append(("close_drawer", None, None))
        self._index = {e: i for i, e in enumerate(self._entries)}

    @property
    def size(self) -> int:
        return len(self._entries)

    def encode(self, verb: str, target_color: int | None = None,
               dest_color: int | None = None) -> int:
        key = (verb, target_color, dest_color)
        if key not in self._index:
            raise InvalidTaskError(f"no instruction for {key!r}")
        return self._index[key]

    def decode(self, instruction_id: int) -> tuple[str, int | None, int | None]:
        return self._entries[instruction_id]

    def task(self, verb: str, target_color: int | None = None,
             dest_color: int | None = None) -> TaskSpec:
        return TaskSpec(verb, target_color, dest_color,
                        self.encode(verb, target_color, dest_color))

    def task_from_id(self, instruction_id: int) -> TaskSpec:
        verb, c, d = self.decode(instruction_id)
        return TaskSpec(verb, c, d, instruction_id)

    def all_tasks(self) -> list[TaskSpec]:
        return [self.task_from_id(i) for i in range(self.size)]

    def text(self, instruction_id: int) -> str:
        verb, c, d = self.decode(instruction_id)
        def name(i): return f"{COLOR_NAMES[i]} {_object_shape(i)}"
        if verb == "push_left":
            return f"push the {name(c)} to the left"
        if verb == "push_right":
            return f"push the {name(c)} to the right"
        if verb == "pick":
            return f"pick up the {name(c)}"
        if verb == "place_on":
            return f"place the {name(c)} on the {name(d)}"
        if verb == "press_button":
            return "press the button"
        if verb == "open_drawer":
            return "pull the drawer open"
        return "push the drawer closed"


class Env:
    """One environment instance; drive it from a single caller at a time."""

    def __init__(self, config: EnvConfig | None = None):
        self.config = config or EnvConfig()
        self.vocab = InstructionVocab(self.config.n_colors)

    # -- helpers -----------------------------------------------------------
    def drawer_handle(self, ext: float) -> np.ndarray:
        c = self.config
        return np.array([c.drawer_closed_x - ext * c.drawer_travel, c.drawer_y])

    def _validate_task(self, task: TaskSpec) -> None:
        if task.verb not in VERBS:
            raise InvalidTaskError(f"unknown verb {task.verb!r}")
        for col in (task.target_color, task.dest_color):
            if col is not None and not 0 <= col < self.config.n_colors:
                raise InvalidTaskError(
                    f"color id {col} outside configured palette of {self.config.n_colors}"
                )
        if task.verb == "place_on" and task.target_color == task.dest_color:
            raise InvalidTaskError("place_on needs distinct target and destination colors")
        expected = self.vocab.encode(task.verb, task.target_color, task.dest_color)
        if task.instruction_id != expected:
            raise InvalidTaskError(
                f"instruction_id {task.instruction_id} does not match (verb, colors); "
                f"expected {expected}"
            )

    # -- reset ---------------------------------------------------------------
    def reset(self, task: TaskSpec, seed: int) -> WorldState:
        """Seeded scene generation; identical (task, seed) gives identical states."""
        self._validate_task(task)
        c = self.config
        rng = np.random.default_rng([seed, task.instruction_id])

        # Pushable targets need lateral room; pick/place targets stay below
        # the lift line. All objects stay clear of the button and drawer.
        positions: list[np.ndarray] = []

        def sample_pos(x_lo, x_hi, y_lo, y_hi):
            for _ in range(200):
                p = rng.uniform([x_lo, y_lo], [x_hi, y_hi])
                if all(np.linalg.norm(p - q) >= 0.2 for q in positions):
                    return p
            raise RuntimeError("scene generation failed to separate objects")

        objects = []
        for col in range(c.n_colors):
            if task.verb in ("push_left", "push_right") and col == task.target_color:
                p = sample_pos(0.30, 0.70, 0.20, 0.62)
            else:
                p = sample_pos(0.18, 0.82, 0.18, 0.62)
            positions.append(p)
            objects.append(SimObject(shape=_object_shape(col), color=col, pos=p))

        agent = sample_pos(0.20, 0.80, 0.15, 0.55)
        positions.append(agent)

        if task.verb == "open_drawer":
            ext = float(rng.uniform(0.0, 0.08))
        elif task.verb == "close_drawer":
            ext = float(rng.uniform(0.92, 1.0))
        else:
            ext = float(rng.uniform(0.0, 0.25))

        return WorldState(
            agent_pos=agent,
            gripper=0.0,
            objects=objects,
            button_pressed=False,
            drawer_ext=ext,
            step_count=0,
        )

    # -- dynamics --------------------------------------------------------------
    def step(self, state: WorldState, action: Action) -> WorldState:
        c = self.config
        delta = np.asarray(action.delta, dtype=np.float64)
        if delta.shape != (2,) or not np.all(np.isfinite(delta)):
            raise ValueError("action delta must be two finite numbers")
        if np.any(np.abs(delta) > c.delta_max + 1e-12):
            raise ValueError(f"delta {delta} exceeds bound {c.delta_max}")
        g_cmd = float(action.gripper_cmd)
        if not np.isfinite(g_cmd) or not 0.0 <= g_cmd <= 1.0:
            raise ValueError(f"gripper_cmd {g_cmd} outside [0, 1]")

        s = state.copy()
        was_closed = s.gripper >= 0.5
        now_closed = g_cmd >= 0.5
        prev_handle = self.drawer_handle(s.drawer_ext)
        r = c.agent_radius
        s.agent_pos = np.clip(s.agent_pos + delta, r, 1.0 - r)
        s.gripper = g_cmd

        held = next((o for o in s.objects if o.held), None)

        # Grasp on the open->closed transition while overlapping an object.
        if now_closed and not was_closed and held is None:
            cands = [o for o in s.objects
                     if np.linalg.norm(o.pos - s.agent_pos) <= c.grasp_radius]
            if cands:
                held = min(cands, key=lambda o: np.linalg.norm(o.pos - s.agent_pos))
                held.held = True

        # Release everything when the gripper opens.
        if not now_closed and held is not None:
            held.held = False
            held = None

        if held is not None:
            held.pos = s.agent_pos.copy()

        # A closed, empty gripper shoves objects it contacts.
        if now_closed and held is None:
            ro = c.object_radius
            for o in s.objects:
                gap = o.pos - s.agent_pos
                dist = float(np.linalg.norm(gap))
                if dist < c.contact_dist:
                    direction = gap / dist if dist > 1e-9 else np.array([1.0, 0.0])
                    o.pos = np.clip(s.agent_pos + direction * c.contact_dist, ro, 1.0 - ro)

        # Button latches once pressed.
        if now_closed and np.linalg.norm(s.agent_pos - np.asarray(c.button_pos)) \
                <= c.button_radius + 0.02:
            s.button_pressed = True

        # Drawer handle drags along its travel axis while gripped.
        if now_closed and np.linalg.norm(state.agent_pos - prev_handle) <= c.drawer_handle_radius:
            s.drawer_ext = float(np.clip(s.drawer_ext - delta[0] / c.drawer_travel, 0.0, 1.0))

        s.step_count = state.step_count + 1
        return s

    # -- success predicate ----------------------------------------------------
    def task_success(self, state: WorldState, task: TaskSpec) -> bool:
        c = self.config
        v = task.verb
        if v == "push_left":
            return state.object_of_color(task.target_color).pos[0] <= c.push_zone
        if v == "push_right":
            return state.object_of_color(task.target_color).pos[0] >= 1.0 - c.push_zone
        if v == "pick":
            o = state.object_of_color(task.target_color)
            return o.held and o.pos[1] >= c.lift_line
        if v == "place_on":
            o = state.object_of_color(task.target_color)
            d = state.object_of_color(task.dest_color)
            return (not o.held) and np.linalg.norm(o.pos - d.pos) <= c.place_radius
        if v == "press_button":
            return state.button_pressed
        if v == "open_drawer":
            return state.drawer_ext >= c.drawer_open_thresh
        if v == "close_drawer":
            return state.drawer_ext <= c.drawer_close_thresh
        raise InvalidTaskError(f"unknown verb {v!r}")

    # -- scripted expert --------------------------------------------------------
    def scripted_expert(self, state: WorldState, task: TaskSpec) -> Action:
        """Proportional controller toward the current subgoal of ``task``."""
        self._validate_task(task)
        c = self.config
        if self.task_success(state, task):
            return Action.zero()

        agent = state.agent_pos

        def toward(target, gripper):
            d = np.clip(np.asarray(target) - agent, -c.delta_max, c.delta_max)
            return Action(delta=d, gripper_cmd=float(gripper))

        v = task.verb
        if v in ("push_left", "push_right"):
            sign = -1.0 if v == "push_left" else 1.0
            obj = state.object_of_color(task.target_color)
            stand = obj.pos - np.array([sign * (c.contact_dist + 0.02), 0.0])
            on_push_side = (obj.pos[0] - agent[0]) * sign >= c.contact_dist * 0.7
            aligned = abs(agent[1] - obj.pos[1]) <= 0.02
            if on_push_side and aligned:
                # Drive through the object toward the wall zone.
                goal = np.array([0.0 if sign < 0 else 1.0, obj.pos[1]])
                return toward(goal, 1.0)
            if not on_push_side and abs(agent[1] - obj.pos[1]) < c.contact_dist + 0.03:
                # Detour around the object rather than plowing through it.
                side = 1.0 if agent[1] >= obj.pos[1] else -1.0
                detour_y = obj.pos[1] + side * (c.contact_dist + 0.06)
                return toward([agent[0], detour_y], 1.0)
            return toward(stand, 1.0)

        if v == "pick":
            obj = state.object_of_color(task.target_color)
            if obj.held:
                return toward([agent[0], c.lift_line + 0.05], 1.0)
            if np.linalg.norm(obj.pos - agent) <= c.grasp_radius * 0.6:
                return Action(delta=np.zeros(2), gripper_cmd=1.0)
            return toward(obj.pos, 0.0)

        if v == "place_on":
            obj = state.object_of_color(task.target_color)
            dest = state.object_of_color(task.dest_color)
            if obj.held:
                if np.linalg.norm(dest.pos - agent) <= c.place_radius * 0.5:
                    return Action(delta=np.zeros(2), gripper_cmd=0.0)
                return toward(dest.pos, 1.0)
            if np.linalg.norm(obj.pos - agent) <= c.grasp_radius * 0.6:
                return Action(delta=np.zeros(2), gripper_cmd=1.0)
            return toward(obj.pos, 0.0)

        if v == "press_button":
            btn = np.asarray(c.button_pos)
            if np.linalg.norm(btn - agent) <= c.button_radius:
                return Action(delta=np.zeros(2), gripper_cmd=1.0)
            return toward(btn, 0.0)

        # Drawer tasks: engage the handle, then drag along the travel axis.
        opening = v == "open_drawer"
        handle = self.drawer_handle(state.drawer_ext)
        dist = np.linalg.norm(handle - agent)
        if dist > c.drawer_handle_radius * 0.5:
            return toward(handle, 1.0 if dist <= c.drawer_handle_radius * 0.9 else 0.0)
        if state.gripper < 0.5:
            return Action(delta=np.zeros(2), gripper_cmd=1.0)
        drag_x = -c.delta_max if opening else c.delta_max
        corr_y = np.clip(handle[1] - agent[1], -c.delta_max, c.delta_max)
        return Action(delta=np.array([drag_x, corr_y]), gripper_cmd=1.0)

    # -- rendering ----------------------------------------------------------------
    def render(self, state: WorldState, view: str = "static") -> np.ndarray:
        """Rasterize the state to an ``[H, W, 3]`` float image in [0, 1]."""
        if view not in ("static", "wrist"):
            raise ValueError(f"unknown view {view!r}")
        c = self.config
        n = c.frame_size
        img = self._render_full(state, n)
        if view == "wrist":
            img = self._wrist_crop(img, state, n)
        return img

    def _render_full(self, state: WorldState, n: int) -> np.ndarray:
        c = self.config
        img = np.full((n, n, 3), 0.12, dtype=np.float64)
        px = 1.0 / n
        cols = (np.arange(n) + 0.5) * px
        rows = 1.0 - (np.arange(n) + 0.5) * px
        gx = np.broadcast_to(cols[None, :], (n, n))
        gy = np.broadcast_to(rows[:, None], (n, n))

        def blend(alpha, color):
            a = alpha[..., None]
            img[...] = img * (1.0 - a) + np.asarray(color) * a

        def disk(center, radius, color):
            d = np.hypot(gx - center[0], gy - center[1])
            blend(np.clip((radius - d) / px, 0.0, 1.0), color)

        def ring(center, r_out, r_in, color):
            d = np.hypot(gx - center[0], gy - center[1])
            a = np.clip((r_out - d) / px, 0.0, 1.0) * np.clip((d - r_in) / px, 0.0, 1.0)
            blend(a, color)

        def rect(x0, x1, y0, y1, color):
            ax = np.clip((gx - x0) / px, 0.0, 1.0) * np.clip((x1 - gx) / px, 0.0, 1.0)
            ay = np.clip((gy - y0) / px, 0.0, 1.0) * np.clip((y1 - gy) / px, 0.0, 1.0)
            blend(ax * ay, color)

        # Drawer: housing outline, sliding tray, handle knob.
        hx = c.drawer_closed_x
        rect(hx - 0.01, hx + c.drawer_travel + 0.03, c.drawer_y - 0.065,
             c.drawer_y + 0.065, (0.30, 0.26, 0.22))
        handle = self.drawer_handle(state.drawer_ext)
        rect(handle[0], hx + c.drawer_travel + 0.02, c.drawer_y - 0.05,
             c.drawer_y + 0.05, (0.62, 0.48, 0.30))
        disk(handle, 0.030, (0.25, 0.18, 0.10))

        # Button: dark when unpressed, bright when latched.
        btn_color = (0.95, 0.85, 0.15) if state.button_pressed else (0.45, 0.08, 0.08)
        disk(c.button_pos, c.button_radius, btn_color)

        for o in state.objects:
            col = _COLOR_RGB[o.color]
            r = c.object_radius
            if o.shape == "block":
                rect(o.pos[0] - r, o.pos[0] + r, o.pos[1] - r, o.pos[1] + r, col)
            else:
                disk(o.pos, r, col)

        # Agent: ring when open, progressively filled as the gripper closes.
        inner = c.agent_radius * 0.62 * (1.0 - state.gripper)
        ring(state.agent_pos, c.agent_radius, inner, c.agent_color)

        return img.astype(np.float32)

    def _wrist_crop(self, img: np.ndarray, state: WorldState, n: int) -> np.ndarray:
        half = n // 4
        r = int(round((1.0 - state.agent_pos[1]) * n))
        col = int(round(state.agent_pos[0] * n))
        r = min(max(r, half), n - half)
        col = min(max(col, half), n - half)
        crop = img[r - half : r + half, col - half : col + half]
        return np.repeat(np.repeat(crop, 2, axis=0), 2, axis=1)

    # -- convenience -----------------------------------------------------------
    def rollout_expert(self, task: TaskSpec, seed: int,
                       max_steps: int | None = None
                       ) -> tuple[list[WorldState], list[Action], bool]:
        """Run the scripted expert closed-loop; returns (states, actions, success)."""
        max_steps = max_steps or self.config.horizon
        state = self.reset(task, seed)
        states = [state]
        actions: list[Action] = []
        for _ in range(max_steps):
            if self.task_success(state, task):
                break
            a = self.scripted_expert(state, task)
            state = self.step(state, a)
            states.append(state)
            actions.append(a)
        return states, actions, self.task_success(state, task)
