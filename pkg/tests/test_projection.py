"""Tree-to-image layout: spans, separators, widths, and topology checks."""

import numpy as np
import pytest

from treegrid.data import DatasetProfile, build_profile
from treegrid.projection import (
    ImageSizeError,
    project,
    required_width,
    verify_topology,
    write_ppm,
)
from treegrid.trees import bfs_tree, center_tree, select_root, shortest_path_matrix

from conftest import make_graph, path3, random_connected_graph, triangle


def profile_for(graphs, depth):
    profile = build_profile(graphs)
    profile.max_tree_depth = depth
    return profile


def test_required_width_single_node():
    g = make_graph(1, [])
    assert required_width(bfs_tree(g, 0)) == 1


def test_required_width_triangle():
    assert required_width(bfs_tree(triangle(), 0)) == 3


def test_required_width_equals_layout_width_random():
    rng = np.random.default_rng(5)
    for _ in range(30):
        g = random_connected_graph(rng, n_max=12)
        t = center_tree(g)
        profile = profile_for([g], t.depth)
        img = project(t, g, profile)
        max_col = int(np.nonzero(img.occupancy.any(axis=0))[0].max())
        assert max_col + 1 == required_width(t) == g.node_count


def test_project_single_node():
    g = make_graph(1, [], node_labels=[0])
    t = bfs_tree(g, 0)
    img = project(t, g, profile_for([g], 1))
    assert img.shape == (1, 1, 2)  # S_V = 1, S_E = 1 placeholder block
    assert img.occupancy[0, 0]
    assert img.pixels[0, 0, 0] == 1.0  # node one-hot
    assert img.pixels[0, 0, 1] == 0.0  # edge block stays zero at the root


def test_project_triangle_hand_layout():
    g = triangle()
    t = bfs_tree(g, 0)
    img = project(t, g, profile_for([g], 2))
    src = img.source_node
    assert src[0].tolist() == [0, 0, 0]  # root spans all three columns
    assert src[1].tolist() == [-1, 1, 2]  # separator, then the two children
    assert img.occupancy[1].tolist() == [False, True, True]
    assert not img.pixels[1, 0].any()  # the separator pixel is all-zero


def test_project_path_rooted_at_center():
    g = path3()
    root = select_root(shortest_path_matrix(g))
    assert root == 1
    t = bfs_tree(g, root)
    img = project(t, g, profile_for([g], 2))
    assert img.source_node[0].tolist() == [1, 1, 1]
    assert img.source_node[1].tolist() == [-1, 0, 2]


def test_feature_replication_and_edge_blocks():
    g = make_graph(3, [(0, 1), (1, 2)], node_labels=[2, 0, 1],
                   edge_labels=[3, 1])
    t = bfs_tree(g, 1)  # children of 1: nodes 0 and 2
    profile = profile_for([g], t.depth)
    sv = profile.node_label_cardinality
    img = project(t, g, profile)
    root_pixel = img.pixels[0, 0]
    # root feature replicated across its whole span
    assert np.array_equal(img.pixels[0, 1], root_pixel)
    assert np.array_equal(img.pixels[0, 2], root_pixel)
    # node block is a one-hot of the node label
    assert root_pixel[:sv].tolist() == [1.0, 0.0, 0.0]
    assert root_pixel[sv:].sum() == 0.0  # root has no parent edge
    # child of label 2 reached over edge label 3
    child_pixel = img.pixels[1, 1]
    assert child_pixel[:sv].tolist() == [0.0, 0.0, 1.0]
    assert child_pixel[sv + 3] == 1.0


def test_empty_pixels_are_all_zero_and_padding_stays_zero():
    rng = np.random.default_rng(11)
    for _ in range(20):
        g = random_connected_graph(rng, n_max=10, edge_label_card=3)
        t = center_tree(g)
        profile = profile_for([g], t.depth + 2)
        profile.max_nodes += 3
        img = project(t, g, profile)
        assert not img.pixels[~img.occupancy].any()
        assert not img.occupancy[t.depth:].any()
        assert not img.occupancy[:, g.node_count:].any()
        # every non-empty pixel's node block is a valid one-hot
        sv = profile.node_label_cardinality
        node_block = img.pixels[img.occupancy][:, :sv]
        assert np.array_equal(node_block.sum(axis=1), np.ones(len(node_block)))


def test_each_node_occupies_exactly_one_span_and_layer_counts_match():
    rng = np.random.default_rng(21)
    for _ in range(25):
        g = random_connected_graph(rng, n_max=12)
        t = center_tree(g)
        img = project(t, g, profile_for([g], t.depth))
        src = img.source_node
        total_span_cells = 0
        for v in range(g.node_count):
            rows, cols = np.nonzero(src == v)
            assert len(set(rows.tolist())) == 1
            assert rows[0] == t.depth_of[v] - 1
            assert cols.max() - cols.min() + 1 == len(cols)  # contiguous
            assert len(cols) == t.descendant_count[v] + 1
            total_span_cells += len(cols)
        layer_nodes = t.layers()
        for r in range(t.depth):
            in_row = {int(v) for v in np.unique(src[r]) if v >= 0}
            assert in_row == set(layer_nodes[r])
        # total self columns across rows: every node contributes one span
        spans = sum(len({int(v) for v in np.unique(src[r]) if v >= 0})
                    for r in range(t.depth))
        assert spans == g.node_count


def test_verify_topology_accepts_canonical_and_shuffled():
    rng = np.random.default_rng(31)
    for trial in range(25):
        g = random_connected_graph(rng, n_max=12)
        t = center_tree(g)
        profile = profile_for([g], t.depth)
        assert verify_topology(project(t, g, profile), t)
        shuffled = project(t, g, profile, rng=np.random.default_rng(trial))
        assert verify_topology(shuffled, t)


def test_shuffled_image_is_sibling_block_permutation_of_canonical():
    g = make_graph(6, [(0, 1), (0, 2), (1, 3), (1, 4), (2, 5)],
                   node_labels=[0, 1, 2, 3, 4, 5])
    t = bfs_tree(g, 0)
    profile = profile_for([g], t.depth)
    canonical = project(t, g, profile)
    seen_orders = set()
    for seed in range(8):
        shuffled = project(t, g, profile, rng=np.random.default_rng(seed))
        assert verify_topology(shuffled, t)
        for r in range(t.depth):
            assert sorted(shuffled.source_node[r].tolist()) == sorted(
                canonical.source_node[r].tolist()
            )
        seen_orders.add(tuple(shuffled.source_node[1].tolist()))
    assert len(seen_orders) > 1  # the shuffle really permutes siblings


def test_verify_topology_rejects_non_contiguous_siblings():
    g = make_graph(4, [(0, 1), (0, 2), (0, 3)])
    t = bfs_tree(g, 0)
    img = project(t, g, profile_for([g], t.depth))
    bad_src = img.source_node.copy()
    bad_occ = img.occupancy.copy()
    bad_px = img.pixels.copy()
    # siblings at row 1: [-1, 1, 2, 3]; split node 1 away from its brothers
    bad_src[1] = [1, -1, 2, 3]
    bad_occ[1] = [True, False, True, True]
    img.source_node, img.occupancy, img.pixels = bad_src, bad_occ, bad_px
    assert not verify_topology(img, t)


def test_verify_topology_rejects_child_outside_parent_span():
    g = make_graph(4, [(0, 1), (1, 2), (1, 3)])
    t = bfs_tree(g, 0)  # spans: row0 node0 (0..3), row1 node1 (1..3), row2 kids
    img = project(t, g, profile_for([g], t.depth))
    src = img.source_node.copy()
    occ = img.occupancy.copy()
    # move node 2's span left, under the separator column outside node 1's span
    row = int(t.depth_of[2]) - 1
    cols = np.nonzero(src[row] == 2)[0]
    src[row, cols] = -1
    occ[row, cols] = False
    src[row, 0] = 2
    occ[row, 0] = True
    img.source_node, img.occupancy = src, occ
    assert not verify_topology(img, t)


def test_project_rejects_oversized_trees():
    g = triangle()
    t = bfs_tree(g, 0)
    small = DatasetProfile(graph_count=1, class_count=1, node_label_cardinality=1,
                           edge_label_cardinality=1, max_nodes=2, max_tree_depth=2)
    with pytest.raises(ImageSizeError, match="columns"):
        project(t, g, small)
    shallow = DatasetProfile(graph_count=1, class_count=1, node_label_cardinality=1,
                             edge_label_cardinality=1, max_nodes=3, max_tree_depth=1)
    with pytest.raises(ImageSizeError, match="depth"):
        project(t, g, shallow)


def test_ppm_dump(tmp_path):
    g = triangle()
    t = bfs_tree(g, 0)
    img = project(t, g, profile_for([g], 2))
    path = tmp_path / "out.ppm"
    write_ppm(img, str(path))
    blob = path.read_bytes()
    assert blob.startswith(b"P6\n3 2\n255\n")
    assert len(blob) == len(b"P6\n3 2\n255\n") + 3 * 2 * 3
    # occupied pixel white, separator black
    body = blob[len(b"P6\n3 2\n255\n"):]
    assert body[:3] == b"\xff\xff\xff"
    assert body[9:12] == b"\x00\x00\x00"
