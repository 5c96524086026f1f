"""scikit-learn style wrapper: ``fit`` trains the denoiser, ``sample`` generates."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted, column_or_1d

from .denoiser import MLPDenoiser, TrainConfig, load_checkpoint, save_checkpoint, train
from .diffusion import LossConfig, NoiseMode, Parameterization, training_loss, forward_diffuse, sample_noise
from .errors import ConfigError, InvalidArgumentError
from .sampler import GuidanceConfig, SamplerConfig, sample
from .schedule import build_schedule
from .timesteps import select_timesteps
from .utils import make_rng


def check_parameterization(param, schedule) -> None:
    """Refuse epsilon-prediction on a zero-terminal-SNR schedule."""
    if Parameterization.parse(param) is Parameterization.EPSILON and schedule.zero_terminal_snr:
        raise ConfigError(
            "epsilon-prediction is singular at t=T on a zero-terminal-SNR schedule; use prediction='v'"
        )


class DiffusionModel(BaseEstimator):
    """Denoising diffusion model on flat feature vectors.

    Parameters
    ----------
    schedule : {"linear", "scaled-linear", "cosine"}
    T : int
        Number of train timesteps.
    rescale : bool
        Rescale the schedule to zero terminal SNR before training.
    prediction : {"v", "epsilon"}
    hidden, t_dim, c_dim : int
        Denoiser width, timestep-embedding size and class-embedding size.
    learning_rate, beta1, beta2, batch_size, max_iter
        Adam / minibatch settings.
    noise : {"iid", "offset"}
    offset_strength : float
        Per-channel shift scale when ``noise="offset"``.
    cond_dropout : float
        Probability of training a sample with the null class, which the
        unconditional branch of guidance needs. Ignored without labels.
    random_state : int
    """

    def __init__(
        self,
        schedule="scaled-linear",
        T=1000,
        rescale=True,
        prediction="v",
        hidden=256,
        t_dim=32,
        c_dim=16,
        learning_rate=1e-3,
        beta1=0.9,
        beta2=0.999,
        batch_size=128,
        max_iter=2000,
        noise="iid",
        offset_strength=0.1,
        cond_dropout=0.1,
        random_state=0,
    ):
        self.schedule = schedule
        self.T = T
        self.rescale = rescale
        self.prediction = prediction
        self.hidden = hidden
        self.t_dim = t_dim
        self.c_dim = c_dim
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.batch_size = batch_size
        self.max_iter = max_iter
        self.noise = noise
        self.offset_strength = offset_strength
        self.cond_dropout = cond_dropout
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            batch_size=self.batch_size,
            iterations=self.max_iter,
            seed=self.random_state,
            noise=NoiseMode(self.noise, self.offset_strength),
            loss=LossConfig(),
            cond_dropout=self.cond_dropout,
        )

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        sched = build_schedule(self.schedule, self.T, rescaled=self.rescale)
        check_parameterization(self.prediction, sched)
        cfg = self._train_config()
        if y is None:
            self.classes_ = np.array([])
            labels = None
            cfg.cond_dropout = 0.0
        else:
            y = column_or_1d(y)
            if y.shape[0] != X.shape[0]:
                raise InvalidArgumentError("X and y have different numbers of samples")
            self.classes_, labels = np.unique(y, return_inverse=True)
        rng = make_rng(self.random_state)
        self.model_ = MLPDenoiser(
            data_dim=X.shape[1],
            hidden=self.hidden,
            t_dim=self.t_dim,
            c_dim=self.c_dim,
            n_classes=len(self.classes_),
            T=sched.T,
            param=self.prediction,
            schedule_hash=sched.digest(),
            rng=rng,
            meta={"schedule": {"kind": str(self.schedule), "T": sched.T, "rescaled": bool(self.rescale)}},
        )
        self.schedule_ = sched
        self.n_features_in_ = X.shape[1]
        self.loss_curve_ = train(self.model_, X, labels, sched, cfg, rng=rng)
        return self

    def _encode(self, y, n):
        if y is None:
            return None
        y = np.broadcast_to(np.asarray(y), (n,))
        idx = np.searchsorted(self.classes_, y)
        idx = np.clip(idx, 0, max(len(self.classes_) - 1, 0))
        if len(self.classes_) == 0 or np.any(self.classes_[idx] != y):
            raise InvalidArgumentError(f"unknown class label(s) in {np.unique(y)!r}")
        return idx

    def sample(
        self,
        n_samples=1,
        y=None,
        strategy="trailing",
        n_steps=25,
        method="ddim",
        guidance_scale=None,
        guidance_rescale=0.0,
        random_state=None,
    ):
        """Draw ``n_samples`` rows; ``y`` selects a class, ``None`` is unconditional."""
        check_is_fitted(self, "model_")
        plan = select_timesteps(strategy, self.schedule_.T, n_steps)
        guidance = None
        if guidance_scale is not None:
            if y is None:
                raise InvalidArgumentError("guidance needs a class label y")
            guidance = GuidanceConfig(guidance_scale, guidance_rescale)
        cfg = SamplerConfig(plan, method, guidance)
        cond = self._encode(y, n_samples)
        rng = make_rng(self.random_state if random_state is None else random_state)
        return sample(self.model_, self.schedule_, cfg, cond, n_samples, rng)

    def score(self, X, y=None):
        """Negative mean training loss on ``X`` under a fixed noise/timestep draw."""
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        rng = make_rng(0)
        t = rng.integers(1, self.schedule_.T + 1, size=X.shape[0])
        eps = sample_noise(X.shape, None, rng)
        x_t = forward_diffuse(X, eps, t, self.schedule_)
        cond = self._encode(y, X.shape[0]) if y is not None else None
        out = self.model_.forward(x_t, t, cond)
        return -training_loss(out, X, eps, t, self.schedule_, self.model_.param)

    def save(self, path):
        check_is_fitted(self, "model_")
        self.model_.meta["estimator"] = {
            k: (v if isinstance(v, (int, float, str, bool)) else str(v))
            for k, v in self.get_params().items()
        }
        self.model_.meta["classes"] = self.classes_.tolist()
        save_checkpoint(self.model_, path)

    @classmethod
    def load(cls, path):
        model = load_checkpoint(path)
        est = cls(**model.meta.get("estimator", {}))
        est.schedule_ = build_schedule(est.schedule, est.T, rescaled=est.rescale)
        est.model_ = load_checkpoint(path, est.schedule_)
        est.classes_ = np.asarray(model.meta.get("classes", []))
        est.n_features_in_ = model.data_dim
        return est
