"""Regenerate velodyne.bin and the expected-value files with numpy.

Follows the KITTI object devkit conventions: points are read with
np.fromfile(dtype=float32).reshape(-1, 4), mapped to the rectified camera
frame with R0_rect @ Tr_velo_to_cam, and box corners come from
compute_box_3d (bottom face at y, rotation about the camera y axis).
"""
import numpy as np

rng = np.random.default_rng(7)
pts = np.empty((64, 4), dtype=np.float32)
pts[:, 0] = rng.uniform(2, 60, 64)
pts[:, 1] = rng.uniform(-20, 20, 64)
pts[:, 2] = rng.uniform(-2.5, 1.5, 64)
pts[:, 3] = rng.uniform(0, 1, 64)
pts.tofile("velodyne.bin")

calib = {}
for line in open("calib.txt"):
    key, vals = line.split(":", 1)
    calib[key] = np.array([float(v) for v in vals.split()])
R0 = np.eye(4)
R0[:3, :3] = calib["R0_rect"].reshape(3, 3)
Tr = np.eye(4)
Tr[:3, :] = calib["Tr_velo_to_cam"].reshape(3, 4)
P2 = calib["P2"].reshape(3, 4)

pts = np.fromfile("velodyne.bin", dtype=np.float32).reshape(-1, 4)
hom = np.hstack([pts[:, :3].astype(np.float64), np.ones((len(pts), 1))])
rect = (R0 @ Tr @ hom.T).T[:, :3]
np.savetxt("velodyne_rect.txt", np.hstack([rect, pts[:, 3:4]]), fmt="%.9f")


def compute_box_3d(h, w, l, x, y, z, ry):
    c, s = np.cos(ry), np.sin(ry)
    R = np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
    xc = [l / 2, l / 2, -l / 2, -l / 2, l / 2, l / 2, -l / 2, -l / 2]
    yc = [0, 0, 0, 0, -h, -h, -h, -h]
    zc = [w / 2, -w / 2, -w / 2, w / 2, w / 2, -w / 2, -w / 2, w / 2]
    return (R @ np.array([xc, yc, zc])).T + np.array([x, y, z])


rows = []
for line in open("label.txt"):
    f = line.split()
    if f[0] == "DontCare":
        continue
    h, w, l, x, y, z, ry = map(float, f[8:15])
    corners = compute_box_3d(h, w, l, x, y, z, ry)
    proj = (P2 @ np.hstack([corners, np.ones((8, 1))]).T).T
    uv = proj[:, :2] / proj[:, 2:3]
    for k in range(8):
        rows.append([*corners[k], *uv[k]])
np.savetxt("box_corners.txt", np.array(rows), fmt="%.9f")
