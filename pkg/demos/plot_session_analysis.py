"""
From gameplay frames to a session report
========================================

Label every frame of a (synthetic) session, smooth the timeline, summarize it
and compare the result with the player's Likert self-report.
"""

import numpy as np

from hmd_fer.dataset import EmotionLabel as E, FrameRecord, SelfReport
from hmd_fer.session import (compare_with_report, format_report, predict_session,
                             smooth_timeline, summarize)
from hmd_fer.synthetic import render_face, synthetic_corpus
from hmd_fer.training import TrainConfig, train

###############################################################################
# Smoothing is a centered majority vote; ties keep the previous label.

print(smooth_timeline([3, 3, 6], 3))
print(smooth_timeline([2, 5, 2, 5, 2, 5], 3))
print(smooth_timeline([6, 6, 3, 6, 6], 3))

###############################################################################
# A quickly trained model and a session of 60 frames at 1 fps: mostly neutral,
# a happy stretch and a short surprise.

model, _ = train(TrainConfig(epochs=25, batch_size=16, seed=0), synthetic_corpus(12, seed=1))
rng = np.random.default_rng(5)
script = [E.NEUTRAL] * 25 + [E.HAPPY] * 20 + [E.SURPRISE] * 5 + [E.NEUTRAL] * 10
frames = [FrameRecord(i, i * 1000, render_face(int(e), rng)) for i, e in enumerate(script)]

timeline = predict_session(model, frames, window=5, game_id="demo", participant_id="p01")
print("raw     ", "".join(str(k) for k in timeline.raw))
print("smoothed", "".join(str(k) for k in timeline.smoothed))

###############################################################################
# Summary and agreement with what the player said afterwards.

summary = summarize(timeline)
report = SelfReport({E.ANGRY: 1, E.DISGUST: 1, E.FEAR: 2, E.HAPPY: 5, E.SAD: 1,
                     E.SURPRISE: 3, E.NEUTRAL: 4})
agreement = compare_with_report(summary, report)
print(format_report(summary, agreement))
