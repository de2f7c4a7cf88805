"""Why clustering runs again on a spatially shrunk copy of the cloud.

A bus 45 m out returns wall samples spaced wider than the clustering
radius, so single-scale DBSCAN shatters it into fragments that fail the
vehicle-dimension gate. Scaling the cloud toward the sensor pulls those
samples back within reach; the fitted box is reported in the original
coordinates either way.
"""

from rsulabel.discovery import DiscoveryConfig, FrameBundle, discover
from rsulabel.geometry import bev_iou
from rsulabel.simulator import fixture_library, simulate


def main() -> None:
    sim = simulate(fixture_library()["sparse_bus"])
    merged = sim.merged_frames()
    frame = len(merged) // 2
    cloud, gt = merged[frame], sim.gt[frame][0]
    print(f"frame {frame}: {len(cloud)} points, ground truth bus "
          f"{gt.l:.1f} x {gt.w:.1f} m at ({gt.cx:.0f}, {gt.cy:.0f})\n")

    for scales in ((1.0,), (1.0, 0.5)):
        boxes = discover(FrameBundle(cloud, ()),
                         DiscoveryConfig(scales=scales, history_frames=0))
        print(f"scales {list(scales)}: {len(boxes)} box(es)")
        for b in boxes:
            print(f"  {b.l:5.2f} x {b.w:4.2f} x {b.h:4.2f} m, "
                  f"IoU vs truth {bev_iou(b, gt):.2f}")
    print("\nScale 1.0 alone leaves the bus walls as sub-threshold"
          "\nfragments; adding scale 0.5 recovers one full-length box.")


if __name__ == "__main__":
    main()
