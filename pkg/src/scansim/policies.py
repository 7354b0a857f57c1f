"""Length policies: map the transmitter's view of each trial to a codeword length."""
import numpy as np

from .allocator import build_outage_table, solve_group, solve_instance
from .codec import CodecConfig
from .csi import LengthSet
from .evaluator import EvaluatorModel, predict_distortion


class FixedPolicy:
    name = "fixed"

    def __init__(self, B: int):
        self.B = int(B)

    def assign(self, contexts):
        return [self.B] * len(contexts)


class _Predicting:
    def __init__(self, model: EvaluatorModel, D_th: float, lengths: LengthSet = LengthSet(),
                 cfg: CodecConfig = CodecConfig(), n_streams: int = 2):
        self.model = model
        self.D_th = float(D_th)
        self.lengths = lengths
        self.cfg = cfg
        self.n_streams = n_streams

    def predictions(self, contexts) -> np.ndarray:
        """M x T predicted distortions from the coarse codeword only."""
        return np.array([predict_distortion(self.model, c.image, c.coarse, c.sigma2, self.lengths,
                                            self.cfg, self.n_streams) for c in contexts])


class InstancePolicy(_Predicting):
    name = "instance"

    def assign(self, contexts):
        return [solve_instance(row, self.D_th, self.lengths).B for row in self.predictions(contexts)]


class GroupPolicy(_Predicting):
    """Water-filling under an average budget, over consecutive groups of
    ``group_size`` trials (all trials when None)."""

    name = "group"

    def __init__(self, model, D_th, L_th: float, lengths=LengthSet(), cfg=CodecConfig(), n_streams=2,
                 group_size: int | None = None, literal: bool = False):
        super().__init__(model, D_th, lengths, cfg, n_streams)
        self.L_th = float(L_th)
        self.group_size = group_size
        self.literal = literal

    def assign(self, contexts):
        d_hat = self.predictions(contexts)
        size = self.group_size or len(contexts)
        out = []
        for start in range(0, len(contexts), size):
            table = build_outage_table(d_hat[start:start + size], self.D_th, self.lengths)
            out.extend(solve_group(table, self.L_th, self.lengths, literal=self.literal).values)
        return out
