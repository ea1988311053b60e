"""
Hybrid coding on a toy task
===========================

Teacher MLP, layer-wise tandem learning of a bursting student, then a
first-spike readout trained on top. Runs in a few seconds.
"""

import numpy as np

from hybridsnn.coding import direct_decode
from hybridsnn.data import gaussian_blobs
from hybridsnn.ltl import LTLConfig, build_student, train_hidden_stack
from hybridsnn.neurons import run_window
from hybridsnn.teacher import TeacherNetwork, train_teacher
from hybridsnn.ttfs import (TTFSTrainConfig, build_output_layer, calibrate_output_threshold,
                            evaluate, train_output_layer)

rng = np.random.default_rng(0)
T = 8
ds = gaussian_blobs(n_train=2000, n_test=1000, n_features=8, n_classes=4, seed=1)
ds = ds.split_validation(300, rng)

teacher = train_teacher(ds, TeacherNetwork.mlp([8, 32, 32, 4], rng), 5, rng=rng)
print("teacher accuracy", teacher.test_accuracy)

# the student starts from the teacher's weights
student = build_student(teacher, gamma=5)
train_hidden_stack(student, teacher, ds.x_train, LTLConfig(T=T, epochs=2), rng)


def last_counts(x):
    return run_window(student, x, T)[-1].counts


train, val, test = last_counts(ds.x_train), last_counts(ds.x_val), last_counts(ds.x_test)
direct = direct_decode(teacher.classifier.weight, test).argmax(axis=1)
print("student, averaged readout:", (direct == ds.y_test).mean())

readout = build_output_layer(teacher.classifier.weight, T, init_scale=0.1)
calibrate_output_threshold(readout, train[:, :1000])
print("before training:", {k: v for k, v in evaluate(readout, test, ds.y_test).items()
                           if k != "decisions"})

rows = train_output_layer(readout, train, ds.y_train, val, ds.y_val,
                          TTFSTrainConfig(epochs=6, lr=1e-3), rng)
for row in rows:
    print(f"epoch {row['epoch']}: acc {row['acc_tf']:.3f}, mean t_f {row['mean_tf']:.2f}")

final = evaluate(readout, test, ds.y_test)
print("first-spike accuracy", final["acc_tf"], "mean t_f", final["mean_tf"])
