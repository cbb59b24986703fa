"""A desk-scale two-cook kitchen on an ASCII grid.

Legend: ``X`` counter, ``O`` onion dispenser, ``D`` dish dispenser, ``P`` pot,
``S`` serving window, space = floor, digits = agent start cells (floor).

Cooks move in the four cardinal directions, stay, or interact. There is no
facing state: INTERACT scans the four adjacent tiles in N, S, W, E order and
the first applicable interaction for the agent's hand fires. A pot cooks a
recipe's worth of onions into a soup over ``cook_time`` steps; delivering a
soup at the serving window yields the recipe reward, shared by both cooks.

States are packed into ints by mixed-radix encoding, so state ids are
intrinsic to the state content and portable across processes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import CooperativeEnv, EnvSpec, EventSchema

EVENT_NAMES = (
    "pickup_onion",
    "pickup_dish",
    "pickup_soup",
    "place_in_pot",
    "deliver_soup",
    "put_on_counter",
    "pickup_from_counter",
    "stay",
    "movement",
    "order_reward",
)

NORTH, SOUTH, WEST, EAST, STAY, INTERACT = range(6)
_DELTAS = {NORTH: (0, -1), SOUTH: (0, 1), WEST: (-1, 0), EAST: (1, 0)}
_SCAN_ORDER = (NORTH, SOUTH, WEST, EAST)

HAND_EMPTY, HAND_ONION, HAND_DISH = 0, 1, 2
# soup of recipe r is hand code 3 + r

DEFAULT_LAYOUT = (
    "XOPSX",
    "X1 2X",
    "XX XX",
    "XXDXX",
)

_MEMO_CAP = 4_000_000


@dataclass(frozen=True)
class Recipe:
    onions: int
    reward: float


class MiniKitchen(CooperativeEnv):
    def __init__(
        self,
        layout: tuple[str, ...] = DEFAULT_LAYOUT,
        horizon: int = 100,
        cook_time: int = 5,
        recipes: tuple[Recipe, ...] = (Recipe(onions=3, reward=20.0),),
        discount: float = 0.99,
        random_start: bool = False,
        name: str = "kitchen",
    ) -> None:
        if cook_time < 1:
            raise ValueError("cook_time must be >= 1")
        if not recipes:
            raise ValueError("at least one recipe required")
        sizes = [r.onions for r in recipes]
        if sorted(set(sizes)) != sizes:
            raise ValueError("recipe onion counts must be strictly increasing")
        if any(r.onions < 1 or r.reward <= 0 for r in recipes):
            raise ValueError("recipes need >= 1 onion and positive reward")

        self.layout = tuple(layout)
        self.cook_time = cook_time
        self.recipes = tuple(recipes)
        self.pot_capacity = max(sizes)
        self._recipe_by_size = {r.onions: i for i, r in enumerate(recipes)}
        self.schema = EventSchema(EVENT_NAMES, count_valued=frozenset({"order_reward"}))
        self.delivery_event = "deliver_soup"
        self.noop_action = STAY

        self._parse_layout()

        n_recipes = len(self.recipes)
        self._n_hand = 3 + n_recipes
        # pot code layout: idle 0..cap, cooking (recipe, timer), then ready(recipe)
        self._cooking_base = self.pot_capacity + 1
        self._ready_base = self._cooking_base + n_recipes * cook_time
        self._n_pot = self._ready_base + n_recipes

        f = len(self.floor_cells)
        self._radices = (
            [f, f, self._n_hand, self._n_hand]
            + [self._n_pot] * len(self.pots)
            + [self._n_hand] * len(self.counters)
        )
        size = 1
        for r in self._radices:
            size *= r
        self._memo: dict[tuple[int, int, int], tuple[int, float, tuple]] = {}

        start = self._pack(self._start_tuple(self.agent_starts))
        if random_start:
            combos = [
                (i, j)
                for i in range(f)
                for j in range(f)
                if i != j
            ]
            prob = 1.0 / len(combos)
            dist = {
                self._pack(self._start_tuple((self.floor_cells[i], self.floor_cells[j]))): prob
                for i, j in combos
            }
        else:
            dist = {start: 1.0}

        self.spec = EnvSpec(
            name=name,
            n_agents=2,
            action_space_sizes=(6, 6),
            state_space_size=size,
            horizon=horizon,
            discount=discount,
            initial_state_dist=dist,
        )

    # -- layout ------------------------------------------------------------

    def _parse_layout(self) -> None:
        rows = self.layout
        if not rows or any(len(r) != len(rows[0]) for r in rows):
            raise ValueError("layout must be a non-empty rectangular grid")
        legend = set("XODPS 123456789")
        tiles: dict[tuple[int, int], str] = {}
        starts: dict[int, tuple[int, int]] = {}
        floor: list[tuple[int, int]] = []
        for y, row in enumerate(rows):
            for x, ch in enumerate(row):
                if ch not in legend:
                    raise ValueError(f"unknown layout character {ch!r} at ({x},{y})")
                if ch.isdigit():
                    starts[int(ch)] = (x, y)
                    floor.append((x, y))
                    tiles[(x, y)] = " "
                else:
                    if ch == " ":
                        floor.append((x, y))
                    tiles[(x, y)] = ch
        if sorted(starts) != [1, 2]:
            raise ValueError("layout must mark exactly two start cells '1' and '2'")

        self.tiles = tiles
        self.floor_cells = sorted(floor)
        self._floor_index = {c: i for i, c in enumerate(self.floor_cells)}
        self.agent_starts = (starts[1], starts[2])

        def adjacent_to_floor(cell: tuple[int, int]) -> bool:
            x, y = cell
            return any(
                (x + dx, y + dy) in self._floor_index for dx, dy in _DELTAS.values()
            )

        self.pots = sorted(c for c, t in tiles.items() if t == "P" and adjacent_to_floor(c))
        self.counters = sorted(c for c, t in tiles.items() if t == "X" and adjacent_to_floor(c))
        self._pot_index = {c: i for i, c in enumerate(self.pots)}
        self._counter_index = {c: i for i, c in enumerate(self.counters)}

        for kind, label in (("O", "onion dispenser"), ("D", "dish dispenser"),
                            ("P", "pot"), ("S", "serving window")):
            usable = [c for c, t in tiles.items() if t == kind and adjacent_to_floor(c)]
            if not usable:
                raise ValueError(f"layout has no reachable {label}")

    def _start_tuple(self, positions: tuple[tuple[int, int], tuple[int, int]]):
        return (
            self._floor_index[positions[0]],
            self._floor_index[positions[1]],
            HAND_EMPTY,
            HAND_EMPTY,
            *([0] * len(self.pots)),
            *([0] * len(self.counters)),
        )

    # -- state packing -----------------------------------------------------

    def _pack(self, parts) -> int:
        code = 0
        for value, radix in zip(parts, self._radices):
            code = code * radix + value
        return code

    def _unpack(self, code: int) -> list[int]:
        parts = [0] * len(self._radices)
        for i in range(len(self._radices) - 1, -1, -1):
            code, parts[i] = divmod(code, self._radices[i])
        return parts

    # -- pot codes -----------------------------------------------------------

    def _pot_tick(self, code: int) -> int:
        if self._cooking_base <= code < self._ready_base:
            rel = code - self._cooking_base
            recipe, timer = divmod(rel, self.cook_time)
            if timer == 0:  # timer value 1 stored as offset 0: becomes ready
                return self._ready_base + recipe
            return code - 1
        return code

    def _pot_start_cooking(self, recipe: int) -> int:
        return self._cooking_base + recipe * self.cook_time + (self.cook_time - 1)

    def _pot_ready_recipe(self, code: int) -> int | None:
        if code >= self._ready_base:
            return code - self._ready_base
        return None

    def _pot_idle_onions(self, code: int) -> int | None:
        if code <= self.pot_capacity:
            return code
        return None

    # -- dynamics ------------------------------------------------------------

    def step_fast(self, state, actions):
        a0, a1 = actions
        key = (state, a0, a1)
        hit = self._memo.get(key)
        if hit is not None:
            return hit

        parts = self._unpack(state)
        n_pots = len(self.pots)
        pos = [self.floor_cells[parts[0]], self.floor_cells[parts[1]]]
        hands = [parts[2], parts[3]]
        pots = parts[4 : 4 + n_pots]
        counters = parts[4 + n_pots :]

        events = [[0] * len(EVENT_NAMES) for _ in range(2)]
        acts = (a0, a1)

        pots = [self._pot_tick(c) for c in pots]

        targets = []
        for i in range(2):
            delta = _DELTAS.get(acts[i])
            if delta is None:
                targets.append(pos[i])
            else:
                cand = (pos[i][0] + delta[0], pos[i][1] + delta[1])
                targets.append(cand if cand in self._floor_index else pos[i])
        new_pos = self._resolve_moves(pos, targets)

        for i in range(2):
            if acts[i] == STAY:
                events[i][7] = 1
            if new_pos[i] != pos[i]:
                events[i][8] = 1
        pos = new_pos

        reward = 0.0
        deliveries = 0
        for i in range(2):
            if acts[i] != INTERACT:
                continue
            delivered = self._interact(i, pos[i], hands, pots, counters, events)
            if delivered is not None:
                reward += delivered
                deliveries += 1
        if deliveries:
            for i in range(2):
                events[i][9] = deliveries

        next_parts = (
            self._floor_index[pos[0]],
            self._floor_index[pos[1]],
            hands[0],
            hands[1],
            *pots,
            *counters,
        )
        result = (
            self._pack(next_parts),
            reward,
            (tuple(events[0]), tuple(events[1])),
        )
        if len(self._memo) < _MEMO_CAP:
            self._memo[key] = result
        return result

    @staticmethod
    def _resolve_moves(pos, targets):
        p0, p1 = pos
        t0, t1 = targets
        if t0 == p1 and t1 == p0:  # swap attempts block both
            return [p0, p1]
        if t0 == t1:
            if t0 == p1:  # contested cell is held by a stationary agent 1
                return [p0, p1]
            return [t0, p1]  # lower index wins the contested cell
        return [t0, t1]

    def _interact(self, i, position, hands, pots, counters, events) -> float | None:
        """Apply the first applicable interaction; returns delivery reward if any."""
        x, y = position
        for direction in _SCAN_ORDER:
            dx, dy = _DELTAS[direction]
            cell = (x + dx, y + dy)
            tile = self.tiles.get(cell)
            if tile is None or tile == " ":
                continue
            if tile == "O" and hands[i] == HAND_EMPTY:
                hands[i] = HAND_ONION
                events[i][0] = 1
                return None
            if tile == "D" and hands[i] == HAND_EMPTY:
                hands[i] = HAND_DISH
                events[i][1] = 1
                return None
            if tile == "P":
                j = self._pot_index.get(cell)
                if j is None:
                    continue
                code = pots[j]
                idle = self._pot_idle_onions(code)
                ready = self._pot_ready_recipe(code)
                if hands[i] == HAND_ONION and idle is not None and idle < self.pot_capacity:
                    count = idle + 1
                    if count == self.pot_capacity:
                        pots[j] = self._pot_start_cooking(self._recipe_by_size[count])
                    else:
                        pots[j] = count
                    hands[i] = HAND_EMPTY
                    events[i][3] = 1
                    return None
                if hands[i] == HAND_DISH and ready is not None:
                    hands[i] = 3 + ready
                    pots[j] = 0
                    events[i][2] = 1
                    return None
                if (
                    hands[i] == HAND_EMPTY
                    and idle is not None
                    and idle > 0
                    and idle in self._recipe_by_size
                ):
                    pots[j] = self._pot_start_cooking(self._recipe_by_size[idle])
                    return None
                continue
            if tile == "S" and hands[i] >= 3:
                recipe = self.recipes[hands[i] - 3]
                hands[i] = HAND_EMPTY
                events[i][4] = 1
                return recipe.reward
            if tile == "X":
                j = self._counter_index.get(cell)
                if j is None:
                    continue
                if hands[i] == HAND_EMPTY and counters[j] != HAND_EMPTY:
                    hands[i] = counters[j]
                    counters[j] = HAND_EMPTY
                    events[i][6] = 1
                    return None
                if hands[i] != HAND_EMPTY and counters[j] == HAND_EMPTY:
                    counters[j] = hands[i]
                    hands[i] = HAND_EMPTY
                    events[i][5] = 1
                    return None
                continue
        return None

    # -- debugging -----------------------------------------------------------

    def render(self, state: int) -> str:
        parts = self._unpack(state)
        pos = {self.floor_cells[parts[0]]: "1", self.floor_cells[parts[1]]: "2"}
        rows = []
        for y, row in enumerate(self.layout):
            line = []
            for x, ch in enumerate(row):
                cell = (x, y)
                line.append(pos.get(cell, " " if ch.isdigit() else ch))
            rows.append("".join(line))
        n_pots = len(self.pots)
        hands = parts[2:4]
        pots = parts[4 : 4 + n_pots]
        counters = parts[4 + n_pots :]
        rows.append(f"hands={hands} pots={pots} counters={counters}")
        return "\n".join(rows)


def layout_from_text(text: str) -> tuple[str, ...]:
    """Parse a layout from a newline-separated block, dropping blank lines."""
    rows = [line for line in text.splitlines() if line.strip()]
    width = max(len(r) for r in rows)
    return tuple(r.ljust(width) for r in rows)
