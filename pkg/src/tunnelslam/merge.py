"""Decentralized two-robot map merging over an in-process message channel.

Each robot runs a MergeAgent. Agents exchange descriptor batches, request
the peer point clouds they need for verification, and announce verified
loops, so that after a full exchange both sides hold the same loop set and
can each build, filter, and optimize the joint graph locally in their own
frame. No agent ever reads the other's state directly; everything crosses
the Channel as a message, which is what makes a recorded transcript
replayable.

Verification registers SUBMAPS, not single scans: each side folds the
neighboring keyframe clouds into the center keyframe's frame using its own
odometry before matching. Single tunnel scans carry sensor-centric feature
structure that registers scan origins instead of surfaces; folding a few
viewpoints together suppresses that. Candidate verification work is split
deterministically between the agents (both can derive the full candidate
list from the exchanged descriptors), so each pair is registered once and
shared via loop_announce.
"""

import time
from collections import Counter, deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ChannelClosed, NoCorrespondences, TooFewPoints
from .eval import classify_loop, count_categories
from .frontend import KeyFrame
from .geom import PointCloud, Pose3, compose, inverse, pose_error, relative
from .graphcore import (
    DEFAULT_ODOMETRY_INFO,
    Edge,
    OptimizeConfig,
    PoseGraph,
    optimize,
)
from .placerec import match_keyframes
from .registration import RegistrationParams, global_register
from .robustsel import DEFAULT_GAMMA, OdometryChain, pcm_filter

MESSAGE_KINDS = ("descriptor_batch", "cloud_request", "cloud_response", "loop_announce")
STAGES = ("initial", "post_pcm", "optimized")


@dataclass
class MergeConfig:
    use_filter: bool = True
    use_pcm: bool = True
    sc_threshold: float = 0.7
    robust: str = "gnc_tls"
    pcm_gamma: float = DEFAULT_GAMMA
    submap_radius: int = 2  # keyframes folded on each side of a submap center
    place_radius: float = 5.0  # wrong-place classification radius for reports
    # Submaps fold scans that were already voxeled at keyframe selection, so a
    # finer registration voxel buys accuracy nothing and roughly doubles runtime.
    registration: RegistrationParams = field(
        default_factory=lambda: RegistrationParams(voxel_size=0.45)
    )


@dataclass
class MergeMessage:
    kind: str
    payload: dict
    sender: int
    sequence: int

    def __post_init__(self):
        if self.kind not in MESSAGE_KINDS:
            raise ValueError(f"unknown message kind {self.kind!r}")


@dataclass
class TranscriptEntry:
    recipient: int
    message: MergeMessage


class Channel:
    """In-process queue transport: exactly-once, in-order per sender."""

    def __init__(self, participants):
        self.queues = {int(p): deque() for p in participants}
        self.transcript = []
        self.closed = False
        self._last_seq = {}

    def send(self, recipient, message: MergeMessage):
        if self.closed:
            raise ChannelClosed("send on a closed channel")
        if recipient not in self.queues:
            raise ValueError(f"unknown recipient {recipient}")
        key = (message.sender, message.kind)
        if message.sequence <= self._last_seq.get(key, -1):
            raise ValueError(f"sequence must increase per (sender, kind), got {key}")
        self._last_seq[key] = message.sequence
        self.queues[recipient].append(message)
        self.transcript.append(TranscriptEntry(recipient, message))

    def poll(self, recipient):
        if self.closed:
            raise ChannelClosed("poll on a closed channel")
        queue = self.queues[recipient]
        return queue.popleft() if queue else None

    def idle(self) -> bool:
        return all(not q for q in self.queues.values())

    def close(self):
        self.closed = True


class _ReplayChannel:
    """Feeds one agent its recorded inbound messages; swallows its sends."""

    def __init__(self, transcript, recipient):
        self.inbound = deque(e.message for e in transcript if e.recipient == recipient)
        self.sent = []

    def send(self, recipient, message):
        self.sent.append(TranscriptEntry(recipient, message))

    def poll(self, recipient):
        return self.inbound.popleft() if self.inbound else None


def payload_bytes(value) -> int:
    """Nominal wire size of a message payload, for bandwidth accounting."""
    if value is None:
        return 0
    if isinstance(value, np.ndarray):
        return value.nbytes
    if isinstance(value, Pose3):
        return 7 * 8
    if isinstance(value, (bool, int, float, np.floating, np.integer)):
        return 8
    if isinstance(value, str):
        return len(value)
    if isinstance(value, dict):
        return sum(payload_bytes(v) for v in value.values())
    if isinstance(value, (list, tuple)):
        return sum(payload_bytes(v) for v in value)
    if hasattr(value, "matrix"):  # ScanContext
        return payload_bytes(value.matrix) + payload_bytes(value.ring_key)
    raise TypeError(f"unsized payload element {type(value).__name__}")


def build_submap(keyframes, center: int, radius: int) -> np.ndarray:
    """Temporal-neighbor clouds folded into the frame of keyframe index center.

    center is the keyframe's index attribute, not its list position; the two
    differ whenever the list was subsampled or re-sliced. Neighbors are the
    adjacent list entries, which is temporal adjacency for a keyframe stream.
    """
    pos = next((i for i, kf in enumerate(keyframes) if kf.index == center), None)
    if pos is None:
        raise ValueError(f"no keyframe with index {center}")
    anchor = keyframes[pos]
    pts = []
    for j in range(max(0, pos - radius), min(len(keyframes), pos + radius + 1)):
        rel = relative(anchor.pose, keyframes[j].pose)
        pts.append(keyframes[j].cloud.transform(rel).points)
    return np.vstack(pts)


def _clone_edge(e: Edge) -> Edge:
    return Edge(e.from_key, e.to_key, e.measurement, e.information,
                kind=e.kind, category=e.category, gnc_weight=e.gnc_weight)


def _assemble(nodes: dict, edges) -> PoseGraph:
    graph = PoseGraph()
    for key in sorted(nodes):
        graph.add_node(key, nodes[key])
    for e in edges:
        graph.add_edge(e)
    return graph.validate()


class MergeAgent:
    """One robot's half of a merge session.

    The public attributes mirror the agent's externally meaningful state:
    keyframes (own data), local_graph (own odometry chain), peer_descriptors
    (reconstructed peer keyframes from the batch), pending_verifications
    (candidates whose peer cloud is still in flight).
    """

    def __init__(self, robot: int, keyframes, peer: int, cfg: MergeConfig):
        if not keyframes:
            raise ValueError("agent needs at least one keyframe")
        if robot == peer:
            raise ValueError("merge requires two distinct robot ids")
        self.robot = int(robot)
        self.peer = int(peer)
        self.keyframes = list(keyframes)
        self.cfg = cfg
        self.local_graph = _assemble(
            {(self.robot, kf.index): kf.pose for kf in self._eligible(self.keyframes)},
            self._chain_edges(self.robot, self._eligible(self.keyframes)),
        )
        self.peer_descriptors = None
        self.peer_poses = {}
        self.pending_verifications = deque()
        self.candidates = None
        self.assigned = None
        self.expected_announces = None
        self.announced = {}
        self.finished = False
        self.result = None
        self._sent_batch = False
        self._requests_sent = 0
        self._seq = Counter()

    # -- helpers ---------------------------------------------------------

    def _eligible(self, kfs):
        if self.cfg.use_filter:
            return [kf for kf in kfs if kf.informative]
        return list(kfs)

    @staticmethod
    def _chain_edges(robot, kfs):
        return [
            Edge((robot, prev.index), (robot, cur.index),
                 relative(prev.pose, cur.pose), DEFAULT_ODOMETRY_INFO)
            for prev, cur in zip(kfs, kfs[1:])
        ]

    def _send(self, channel, kind, payload):
        seq = self._seq[kind]
        self._seq[kind] += 1
        channel.send(self.peer, MergeMessage(kind, payload, self.robot, seq))

    def _pair_robots(self):
        a, b = sorted((self.robot, self.peer))
        return a, b

    # -- protocol --------------------------------------------------------

    def step(self, channel) -> bool:
        """Process pending inbox messages; returns True while unfinished."""
        if not self._sent_batch:
            entries = [
                {"index": kf.index, "stamp": kf.stamp, "pose": kf.pose,
                 "informative": kf.informative, "descriptor": kf.descriptor}
                for kf in self._eligible(self.keyframes)
            ]
            self._send(channel, "descriptor_batch", {"entries": entries})
            self._sent_batch = True
        while (msg := channel.poll(self.robot)) is not None:
            handler = getattr(self, f"_on_{msg.kind}")
            handler(channel, msg.payload)
        self._maybe_finalize()
        return not self.finished

    def _on_descriptor_batch(self, channel, payload):
        self.peer_descriptors = [
            KeyFrame(robot=self.peer, index=e["index"], stamp=e["stamp"],
                     pose=e["pose"], cloud=None, informative=e["informative"],
                     descriptor=e["descriptor"])
            for e in payload["entries"]
        ]
        self.peer_poses = {e["index"]: e["pose"] for e in payload["entries"]}
        a, b = self._pair_robots()
        own = self._eligible(self.keyframes)
        a_kfs = own if self.robot == a else self.peer_descriptors
        b_kfs = self.peer_descriptors if self.robot == a else own
        pairs = set()
        for c in match_keyframes(a_kfs, b_kfs, threshold=self.cfg.sc_threshold,
                                 use_filter=self.cfg.use_filter):
            pairs.add((c.kf_a[1], c.kf_b[1]))
        for c in match_keyframes(b_kfs, a_kfs, threshold=self.cfg.sc_threshold,
                                 use_filter=self.cfg.use_filter):
            pairs.add((c.kf_b[1], c.kf_a[1]))
        self.candidates = sorted(pairs)
        # split the verification work: the lower-id agent takes even slots
        mine = 0 if self.robot == a else 1
        self.assigned = self.candidates[mine::2]
        self.expected_announces = len(self.candidates) - len(self.assigned)
        for pair in self.assigned:
            peer_center = pair[1] if self.robot == a else pair[0]
            self.pending_verifications.append(pair)
            self._send(channel, "cloud_request", {"pair": pair, "center": peer_center})

    def _on_cloud_request(self, channel, payload):
        points = build_submap(self.keyframes, payload["center"], self.cfg.submap_radius)
        self._send(channel, "cloud_response",
                   {"pair": payload["pair"], "center": payload["center"], "points": points})

    def _on_cloud_response(self, channel, payload):
        pair = self.pending_verifications.popleft()
        if tuple(payload["pair"]) != tuple(pair):
            raise ValueError(f"cloud_response out of order: {payload['pair']} vs {pair}")
        a, _ = self._pair_robots()
        own_center = pair[0] if self.robot == a else pair[1]
        own_sub = PointCloud(build_submap(self.keyframes, own_center, self.cfg.submap_radius))
        peer_sub = PointCloud(payload["points"])
        try:
            res = global_register(peer_sub, own_sub, self.cfg.registration)
            pose = res.pose if self.robot == a else inverse(res.pose)
            verdict = {"pair": pair, "pose": pose, "fitness": res.fitness,
                       "inliers": res.inlier_correspondences, "converged": res.converged}
        except (TooFewPoints, NoCorrespondences):
            verdict = {"pair": pair, "pose": None, "fitness": 0.0,
                       "inliers": 0, "converged": False}
        self.announced[tuple(pair)] = verdict
        self._send(channel, "loop_announce", verdict)

    def _on_loop_announce(self, channel, payload):
        self.announced[tuple(payload["pair"])] = payload

    # -- local joint-map construction -------------------------------------

    def _maybe_finalize(self):
        if self.finished or self.candidates is None or self.pending_verifications:
            return
        if len(self.announced) < len(self.candidates):
            return
        self.finished = True
        self.result = self._build_result()

    def _build_result(self) -> dict:
        a, b = self._pair_robots()
        own = self._eligible(self.keyframes)
        own_poses = {(self.robot, kf.index): kf.pose for kf in own}
        peer_chain_poses = {(self.peer, i): p for i, p in self.peer_poses.items()}
        verdicts = [self.announced[k] for k in sorted(self.announced)]
        loops = [
            Edge((a, v["pair"][0]), (b, v["pair"][1]), v["pose"],
                 DEFAULT_ODOMETRY_INFO * v["fitness"], kind="inter_robot")
            for v in verdicts if v["converged"]
        ]
        chain_edges = self._chain_edges(self.robot, own) + self._chain_edges(
            self.peer, [KeyFrame(self.peer, i, 0.0, p, None)
                        for i, p in sorted(self.peer_poses.items())])

        report = {
            "robot": self.robot,
            "candidates": len(self.candidates),
            "assigned": len(self.assigned),
            "verified": len(loops),
            "rejected": len(verdicts) - len(loops),
            "no_loops": not loops,
        }
        if not loops:
            nodes = dict(own_poses)
            nodes.update(peer_chain_poses)
            graph = _assemble(nodes, [_clone_edge(e) for e in chain_edges])
            stages = {s: _assemble(dict(nodes), [_clone_edge(e) for e in chain_edges])
                      for s in STAGES}
            report.update({"post_pcm": 0, "anchor_relative": None, "final_chi2": None})
            return {"graph": graph, "stages": stages, "report": report,
                    "loops_initial": [], "loops_kept": [], "optimize": None}

        # place the peer chain through the most confident verified loop
        best = max(loops, key=lambda e: (e.information[0, 0], e.from_key, e.to_key))
        ai, bi = best.from_key[1], best.to_key[1]
        if self.robot == a:
            own_anchor, peer_anchor, T = own_poses[(a, ai)], self.peer_poses[bi], best.measurement
        else:
            own_anchor, peer_anchor, T = own_poses[(b, bi)], self.peer_poses[ai], inverse(best.measurement)
        place = compose(compose(own_anchor, T), inverse(peer_anchor))
        nodes = dict(own_poses)
        for i, p in sorted(self.peer_poses.items()):
            nodes[(self.peer, i)] = compose(place, p)

        if self.cfg.use_pcm:
            chain_a = OdometryChain([e for e in chain_edges if e.from_key[0] == a])
            chain_b = OdometryChain([e for e in chain_edges if e.from_key[0] == b])
            kept = pcm_filter(loops, chain_a, chain_b, self.cfg.pcm_gamma)
        else:
            kept = loops

        stages = {
            "initial": _assemble(dict(nodes),
                                 [_clone_edge(e) for e in chain_edges + loops]),
            "post_pcm": _assemble(dict(nodes),
                                  [_clone_edge(e) for e in chain_edges + kept]),
        }
        graph = _assemble(dict(nodes), [_clone_edge(e) for e in chain_edges + kept])
        anchor = (self.robot, own[0].index)
        opt = optimize(graph, OptimizeConfig(robust=self.cfg.robust), anchor=anchor)
        graph.nodes = dict(opt.poses)
        stages["optimized"] = graph
        own_root = (self.robot, own[0].index)
        peer_root = min(k for k in opt.poses if k[0] == self.peer)
        report.update({
            "post_pcm": len(kept),
            "anchor_relative": relative(opt.poses[own_root], opt.poses[peer_root]),
            "final_chi2": opt.final_chi2,
        })
        return {"graph": graph, "stages": stages, "report": report,
                "loops_initial": loops, "loops_kept": kept, "optimize": opt}


@dataclass
class MergeResult:
    graph: PoseGraph  # optimized joint graph in the lower-id robot's frame
    report: dict
    stages: dict  # stage name -> PoseGraph snapshot
    transcript: list


def exchange(channel: Channel, agents) -> list:
    """Run agents round-robin until both finish; returns the transcript."""
    agents = sorted(agents, key=lambda ag: ag.robot)
    for _ in range(100000):
        busy = [agent.step(channel) for agent in agents]
        if not any(busy) and channel.idle():
            return channel.transcript
    raise RuntimeError("merge session did not terminate")


def _traffic(transcript):
    counts, sizes = Counter(), Counter()
    for entry in transcript:
        counts[entry.message.kind] += 1
        sizes[entry.message.kind] += payload_bytes(entry.message.payload)
    return dict(counts), dict(sizes)


def run_merge_session(kfs_a, kfs_b, cfg: MergeConfig = None) -> MergeResult:
    """Full decentralized merge of two robots' keyframe streams.

    Returns the lower-id agent's result; the report carries both agents'
    session views plus the agreement gap between their independently
    optimized relative anchor frames. With zero verified loops the joint
    graph is the two unconnected chains and report["no_loops"] is True.
    """
    cfg = cfg or MergeConfig()
    if not kfs_a or not kfs_b:
        raise ValueError("both keyframe lists must be non-empty")
    ra, rb = kfs_a[0].robot, kfs_b[0].robot
    if ra >= rb:
        raise ValueError(f"robot ids must be ordered and distinct, got {ra}, {rb}")
    started = time.perf_counter()
    agent_a = MergeAgent(ra, kfs_a, rb, cfg)
    agent_b = MergeAgent(rb, kfs_b, ra, cfg)
    channel = Channel([ra, rb])
    transcript = exchange(channel, [agent_a, agent_b])
    channel.close()

    res_a, res_b = agent_a.result, agent_b.result
    report = dict(res_a["report"])
    report["robots"] = (ra, rb)
    report["per_agent"] = {ra: res_a["report"], rb: res_b["report"]}
    report["messages"], report["bandwidth_bytes"] = _traffic(transcript)
    report["timing"] = {"exchange_s": time.perf_counter() - started}

    rel_a, rel_b = res_a["report"]["anchor_relative"], res_b["report"]["anchor_relative"]
    if rel_a is not None and rel_b is not None:
        report["decentralization_gap"] = pose_error(rel_a, inverse(rel_b))

    gt = {}
    for kf in list(kfs_a) + list(kfs_b):
        if kf.gt_pose is None:
            gt = None
            break
        gt[(kf.robot, kf.index)] = kf.gt_pose
    if gt is not None:
        report["pre_counts"] = count_categories(
            res_a["loops_initial"], gt, place_radius=cfg.place_radius)
        report["post_counts"] = count_categories(
            res_a["loops_kept"], gt, place_radius=cfg.place_radius)
        for stage in res_a["stages"].values():
            for e in stage.inter_robot_edges():
                e.category = classify_loop(e, gt, place_radius=cfg.place_radius)
    return MergeResult(graph=res_a["graph"], report=report,
                       stages=res_a["stages"], transcript=transcript)


def replay_session(keyframes, robot: int, peer: int, cfg: MergeConfig, transcript) -> dict:
    """Rebuild one agent's final result from its recorded inbound messages."""
    agent = MergeAgent(robot, keyframes, peer, cfg)
    channel = _ReplayChannel(transcript, robot)
    for _ in range(100000):
        if not agent.step(channel):
            return agent.result
    raise RuntimeError("replay did not terminate")
