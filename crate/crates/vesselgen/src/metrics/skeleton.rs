//! Morphological thinning to a one-pixel-wide, 8-connected skeleton.
//!
//! Border pixels are peeled in four directional subpasses. Candidates are
//! collected in parallel-sweep style and then deleted sequentially with a
//! re-check, and a pixel is only ever deleted while it is *simple* — its
//! removal provably leaves the local (and therefore global) topology of
//! foreground (8-connected) and background (4-connected) unchanged. Arc
//! endpoints are kept so line tips survive.

use crate::mask::Bitmap;

// Neighbor offsets, fixed order:
//   0 1 2
//   3 . 4
//   5 6 7
const OFFSETS: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

// Indices of the 4-neighbors within OFFSETS.
const SIDE_N: usize = 1;
const SIDE_W: usize = 3;
const SIDE_E: usize = 4;
const SIDE_S: usize = 6;

fn neighborhood_bits(image: &Bitmap, x: usize, y: usize) -> u8 {
    let mut bits = 0u8;
    for (i, (dx, dy)) in OFFSETS.iter().enumerate() {
        if image.get_clipped(x as isize + dx, y as isize + dy) {
            bits |= 1 << i;
        }
    }
    bits
}

/// Number of 8-connected components among the foreground neighbor cells.
fn fg_components_8(bits: u8) -> u32 {
    // cells i, j are adjacent when their offsets differ by at most 1 in
    // each axis
    component_count(bits, |a, b| {
        let (ax, ay) = OFFSETS[a];
        let (bx, by) = OFFSETS[b];
        (ax - bx).abs() <= 1 && (ay - by).abs() <= 1
    })
}

/// Number of 4-connected components among the background neighbor cells
/// that touch a 4-neighbor of the center.
fn bg_components_4_touching(bits: u8) -> u32 {
    let bg = !bits;
    let mut seen = 0u8;
    let mut count = 0u32;
    for start in [SIDE_N, SIDE_W, SIDE_E, SIDE_S] {
        if bits & (1 << start) != 0 || seen & (1 << start) != 0 {
            continue;
        }
        count += 1;
        // flood this background component with 4-adjacency between cells
        let mut stack = vec![start];
        seen |= 1 << start;
        while let Some(i) = stack.pop() {
            for j in 0..8 {
                if bg & (1 << j) == 0 || seen & (1 << j) != 0 {
                    continue;
                }
                let (ax, ay) = OFFSETS[i];
                let (bx, by) = OFFSETS[j];
                if (ax - bx).abs() + (ay - by).abs() == 1 {
                    seen |= 1 << j;
                    stack.push(j);
                }
            }
        }
    }
    count
}

fn component_count(bits: u8, adjacent: impl Fn(usize, usize) -> bool) -> u32 {
    let mut seen = 0u8;
    let mut count = 0u32;
    for start in 0..8 {
        if bits & (1 << start) == 0 || seen & (1 << start) != 0 {
            continue;
        }
        count += 1;
        let mut stack = vec![start];
        seen |= 1 << start;
        while let Some(i) = stack.pop() {
            for j in 0..8 {
                if bits & (1 << j) == 0 || seen & (1 << j) != 0 {
                    continue;
                }
                if adjacent(i, j) {
                    seen |= 1 << j;
                    stack.push(j);
                }
            }
        }
    }
    count
}

/// Deletability table over all 256 neighborhoods: simple and not an arc
/// endpoint.
fn deletable_table() -> &'static [bool; 256] {
    use std::sync::OnceLock;
    static TABLE: OnceLock<[bool; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [false; 256];
        for (bits, slot) in t.iter_mut().enumerate() {
            let bits = bits as u8;
            let neighbor_count = bits.count_ones();
            let endpoint = neighbor_count == 1;
            let isolated = neighbor_count == 0;
            let simple = fg_components_8(bits) == 1 && bg_components_4_touching(bits) == 1;
            *slot = simple && !endpoint && !isolated;
        }
        t
    })
}

/// Thin a binary image to its skeleton. Component and hole counts are
/// preserved exactly.
pub fn skeletonize(channel: &Bitmap) -> Bitmap {
    let table = deletable_table();
    let (w, h) = (channel.width(), channel.height());
    let mut image = channel.clone();
    let mut candidates: Vec<(usize, usize)> = Vec::new();
    loop {
        let mut changed = false;
        for side in [SIDE_N, SIDE_S, SIDE_E, SIDE_W] {
            candidates.clear();
            for y in 0..h {
                for x in 0..w {
                    if !image.get(x, y) {
                        continue;
                    }
                    let bits = neighborhood_bits(&image, x, y);
                    // border pixel of this direction: the side neighbor is
                    // background
                    if bits & (1 << side) != 0 {
                        continue;
                    }
                    if table[bits as usize] {
                        candidates.push((x, y));
                    }
                }
            }
            for &(x, y) in &candidates {
                // sequential re-check: earlier deletions in this subpass may
                // have changed the neighborhood
                let bits = neighborhood_bits(&image, x, y);
                if table[bits as usize] {
                    image.set(x, y, false);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    resolve_junction_triangles(&mut image);
    image
}

// Where three arms meet, thinning can deadlock on a 3-clique of mutually
// adjacent pixels: none is individually deletable, yet the clique puts a
// phantom cycle into the adjacency graph. Each repair re-routes one arm by
// adding a simple pixel and then deleting a clique member that has become
// simple; both moves preserve component and hole counts, and a repair is
// kept only when the local clique count strictly drops.

fn is_simple(image: &Bitmap, x: usize, y: usize) -> bool {
    let bits = neighborhood_bits(image, x, y);
    fg_components_8(bits) == 1 && bg_components_4_touching(bits) == 1
}

fn triangles_in(image: &Bitmap, x0: usize, y0: usize, x1: usize, y1: usize) -> Vec<[(usize, usize); 3]> {
    let mut out = Vec::new();
    for y in y0..=y1 {
        for x in x0..=x1 {
            if !image.get(x, y) {
                continue;
            }
            // canonical orientation: pixel plus two later neighbors in
            // raster order, all mutually adjacent
            let later = [(1isize, 0isize), (-1, 1), (0, 1), (1, 1)];
            for (i, &(dx1, dy1)) in later.iter().enumerate() {
                for &(dx2, dy2) in &later[i + 1..] {
                    if (dx1 - dx2).abs() > 1 || (dy1 - dy2).abs() > 1 {
                        continue;
                    }
                    let (ax, ay) = (x as isize + dx1, y as isize + dy1);
                    let (bx, by) = (x as isize + dx2, y as isize + dy2);
                    if image.get_clipped(ax, ay) && image.get_clipped(bx, by) {
                        out.push([
                            (x, y),
                            (ax as usize, ay as usize),
                            (bx as usize, by as usize),
                        ]);
                    }
                }
            }
        }
    }
    out
}

fn resolve_junction_triangles(image: &mut Bitmap) {
    let (w, h) = (image.width(), image.height());
    for _ in 0..32 {
        let cliques = triangles_in(image, 0, 0, w - 1, h - 1);
        if cliques.is_empty() {
            return;
        }
        let mut progress = false;
        for clique in &cliques {
            if try_repair(image, clique) {
                progress = true;
            }
        }
        if !progress {
            return;
        }
    }
}

fn try_repair(image: &mut Bitmap, clique: &[(usize, usize); 3]) -> bool {
    let (w, h) = (image.width(), image.height());
    let all_set = clique.iter().all(|&(x, y)| image.get(x, y));
    if !all_set {
        return false;
    }
    let min_x = clique.iter().map(|p| p.0).min().unwrap();
    let max_x = clique.iter().map(|p| p.0).max().unwrap();
    let min_y = clique.iter().map(|p| p.1).min().unwrap();
    let max_y = clique.iter().map(|p| p.1).max().unwrap();
    // measurement window covers every triangle an add/delete here can touch
    let (wx0, wy0) = (min_x.saturating_sub(2), min_y.saturating_sub(2));
    let (wx1, wy1) = ((max_x + 2).min(w - 1), (max_y + 2).min(h - 1));
    let before = triangles_in(image, wx0, wy0, wx1, wy1).len();

    for qy in min_y.saturating_sub(1)..=(max_y + 1).min(h - 1) {
        for qx in min_x.saturating_sub(1)..=(max_x + 1).min(w - 1) {
            if image.get(qx, qy) {
                continue;
            }
            // adding a pixel preserves topology iff it is simple afterwards
            image.set(qx, qy, true);
            if !is_simple(image, qx, qy) {
                image.set(qx, qy, false);
                continue;
            }
            for &(mx, my) in clique {
                let bits = neighborhood_bits(image, mx, my);
                if bits.count_ones() <= 1 || !is_simple(image, mx, my) {
                    continue;
                }
                image.set(mx, my, false);
                let after = triangles_in(image, wx0, wy0, wx1, wy1).len();
                if after < before {
                    return true;
                }
                image.set(mx, my, true);
            }
            image.set(qx, qy, false);
        }
    }
    false
}

/// 8-connected foreground component count (union-find over pixel adjacency).
pub fn count_components_8(image: &Bitmap) -> usize {
    let (w, h) = (image.width(), image.height());
    let mut parent: Vec<u32> = (0..(w * h) as u32).collect();
    fn find(parent: &mut [u32], mut i: u32) -> u32 {
        while parent[i as usize] != i {
            parent[i as usize] = parent[parent[i as usize] as usize];
            i = parent[i as usize];
        }
        i
    }
    let union = |parent: &mut [u32], a: u32, b: u32| {
        let (ra, rb) = (find(parent, a), find(parent, b));
        if ra != rb {
            parent[ra as usize] = rb;
        }
    };
    for y in 0..h {
        for x in 0..w {
            if !image.get(x, y) {
                continue;
            }
            let idx = (y * w + x) as u32;
            // link to already-visited neighbors (up row and left)
            for (dx, dy) in [(-1isize, 0isize), (-1, -1), (0, -1), (1, -1)] {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if image.get_clipped(nx, ny) {
                    union(&mut parent, idx, (ny as usize * w + nx as usize) as u32);
                }
            }
        }
    }
    let mut count = 0;
    for y in 0..h {
        for x in 0..w {
            if image.get(x, y) && find(&mut parent, (y * w + x) as u32) == (y * w + x) as u32 {
                count += 1;
            }
        }
    }
    count
}

/// Number of holes: 4-connected background components that do not touch the
/// image border.
pub fn count_holes_4(image: &Bitmap) -> usize {
    let (w, h) = (image.width(), image.height());
    let mut label = vec![0u32; w * h];
    let mut next = 1u32;
    let mut border_labels = Vec::new();
    let mut stack = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if image.get(x, y) || label[y * w + x] != 0 {
                continue;
            }
            let id = next;
            next += 1;
            let mut touches_border = false;
            stack.push((x, y));
            label[y * w + x] = id;
            while let Some((cx, cy)) = stack.pop() {
                if cx == 0 || cy == 0 || cx == w - 1 || cy == h - 1 {
                    touches_border = true;
                }
                for (dx, dy) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
                    let (nx, ny) = (cx as isize + dx, cy as isize + dy);
                    if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                        continue;
                    }
                    let (nx, ny) = (nx as usize, ny as usize);
                    if !image.get(nx, ny) && label[ny * w + nx] == 0 {
                        label[ny * w + nx] = id;
                        stack.push((nx, ny));
                    }
                }
            }
            if touches_border {
                border_labels.push(id);
            }
        }
    }
    (next - 1) as usize - border_labels.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_rng, Rng};
    use rand::RngExt;

    fn from_rows(rows: &[&str]) -> Bitmap {
        let h = rows.len();
        let w = rows[0].len();
        let mut b = Bitmap::new(w, h);
        for (y, row) in rows.iter().enumerate() {
            for (x, ch) in row.chars().enumerate() {
                if ch == '#' {
                    b.set(x, y, true);
                }
            }
        }
        b
    }

    #[test]
    fn empty_stays_empty() {
        let b = Bitmap::new(5, 5);
        assert_eq!(skeletonize(&b).foreground_count(), 0);
    }

    #[test]
    fn single_pixel_survives() {
        let mut b = Bitmap::new(5, 5);
        b.set(2, 2, true);
        let s = skeletonize(&b);
        assert_eq!(s.foreground_count(), 1);
        assert!(s.get(2, 2));
    }

    #[test]
    fn bar_thins_to_line() {
        // filled 3x11 bar: one component, no holes, thinned to a 1-px line
        let bar = from_rows(&[
            "...........",
            "###########",
            "###########",
            "###########",
            "...........",
        ]);
        let s = skeletonize(&bar);
        assert_eq!(count_components_8(&s), 1);
        assert_eq!(count_holes_4(&s), 0);
        // no 2x2 block anywhere: genuinely one pixel wide
        for y in 0..s.height() - 1 {
            for x in 0..s.width() - 1 {
                let block =
                    s.get(x, y) && s.get(x + 1, y) && s.get(x, y + 1) && s.get(x + 1, y + 1);
                assert!(!block, "2x2 block at ({x}, {y})");
            }
        }
        // skeleton of a bar is a path: every pixel has at most 2 neighbors
        for y in 0..s.height() {
            for x in 0..s.width() {
                if s.get(x, y) {
                    let n = (neighborhood_bits(&s, x, y)).count_ones();
                    assert!(n <= 2, "degree {n} at ({x}, {y})");
                }
            }
        }
    }

    #[test]
    fn ring_keeps_its_hole() {
        let ring = from_rows(&[
            ".......",
            ".#####.",
            ".#####.",
            ".##.##.",
            ".#####.",
            ".#####.",
            ".......",
        ]);
        assert_eq!(count_holes_4(&ring), 1);
        let s = skeletonize(&ring);
        assert_eq!(count_components_8(&s), 1);
        assert_eq!(count_holes_4(&s), 1);
    }

    fn random_blobs(rng: &mut Rng, w: usize, h: usize) -> Bitmap {
        let mut b = Bitmap::new(w, h);
        for _ in 0..rng.random_range(1..6) {
            let cx = rng.random_range(0..w) as f64;
            let cy = rng.random_range(0..h) as f64;
            let r = 1.0 + 3.0 * rng.random::<f64>();
            for y in 0..h {
                for x in 0..w {
                    let dx = x as f64 - cx;
                    let dy = y as f64 - cy;
                    if dx * dx + dy * dy <= r * r {
                        b.set(x, y, true);
                    }
                }
            }
        }
        b
    }

    #[test]
    fn topology_preserved_on_random_blobs() {
        for seed in 0..100 {
            let mut rng = derive_rng(0xB10B, seed);
            let b = random_blobs(&mut rng, 24, 24);
            let s = skeletonize(&b);
            assert_eq!(
                count_components_8(&s),
                count_components_8(&b),
                "components changed, seed {seed}"
            );
            assert_eq!(
                count_holes_4(&s),
                count_holes_4(&b),
                "holes changed, seed {seed}"
            );
        }
    }
}
