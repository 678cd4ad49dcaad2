//! Independent oracles and fixture builders shared by the integration tests.

#![allow(dead_code)]

use std::path::PathBuf;

use glis::geometry::{Box3D, Point3, PointCloud};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn bx(x: f64, y: f64, z: f64, l: f64, w: f64, h: f64, theta: f64) -> Box3D {
    Box3D::new(Point3::new(x, y, z), l, w, h, theta).unwrap()
}

pub fn unit_cube(x: f64, y: f64, z: f64) -> Box3D {
    bx(x, y, z, 1.0, 1.0, 1.0, 0.0)
}

/// Point-in-oriented-box test written from the box parameters alone.
pub fn inside(b: &[f64; 7], p: [f64; 3]) -> bool {
    let [x, y, z, l, w, h, t] = *b;
    let (dx, dy) = (p[0] - x, p[1] - y);
    let u = dx * t.cos() + dy * t.sin();
    let v = -dx * t.sin() + dy * t.cos();
    u.abs() <= l / 2.0 && v.abs() <= w / 2.0 && (p[2] - z).abs() <= h / 2.0
}

/// Monte-Carlo IoU: samples uniformly inside `a` and counts hits in `b`.
pub fn mc_iou(a: &Box3D, b: &Box3D, samples: usize, seed: u64) -> f64 {
    let (a, b) = (a.to_array(), b.to_array());
    let [x, y, z, l, w, h, t] = a;
    let (s, c) = t.sin_cos();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..samples {
        let u = (rng.gen::<f64>() - 0.5) * l;
        let v = (rng.gen::<f64>() - 0.5) * w;
        let q = [x + c * u - s * v, y + s * u + c * v, z + (rng.gen::<f64>() - 0.5) * h];
        if inside(&b, q) {
            hits += 1;
        }
    }
    let va = l * w * h;
    let vb = b[3] * b[4] * b[5];
    let inter = va * hits as f64 / samples as f64;
    inter / (va + vb - inter)
}

/// Best total weight over every one-to-one assignment, each assignment
/// summed in row order.
pub fn brute_force_max_total(weights: &[Vec<f64>]) -> f64 {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    let k = rows.max(cols);
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = 0.0f64;
    permute(&mut perm, 0, &mut |p| {
        let mut total = 0.0;
        for (r, &c) in p.iter().enumerate().take(rows) {
            if c < cols && weights[r][c] > 0.0 {
                total += weights[r][c];
            }
        }
        best = best.max(total);
    });
    best
}

fn permute(p: &mut Vec<usize>, i: usize, f: &mut dyn FnMut(&[usize])) {
    if i == p.len() {
        f(p);
        return;
    }
    for j in i..p.len() {
        p.swap(i, j);
        permute(p, i + 1, f);
        p.swap(i, j);
    }
}

/// Random box with center in `[-r, r]^2 x [-0.5, 0.5]`, sizes in `[0.3, 2]`.
pub fn random_box(rng: &mut ChaCha8Rng, r: f64) -> Box3D {
    bx(
        rng.gen_range(-r..r),
        rng.gen_range(-r..r),
        rng.gen_range(-0.5..0.5),
        rng.gen_range(0.3..2.0),
        rng.gen_range(0.3..2.0),
        rng.gen_range(0.3..2.0),
        rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
    )
}

/// Grid of points filling an axis-aligned box, corners included.
pub fn grid_cloud(min: [f64; 3], max: [f64; 3], per_axis: usize) -> Vec<Point3> {
    let mut pts = Vec::new();
    let step = |k: usize, i: usize| min[k] + (max[k] - min[k]) * i as f64 / (per_axis - 1) as f64;
    for i in 0..per_axis {
        for j in 0..per_axis {
            for k in 0..per_axis {
                pts.push(Point3::new(step(0, i), step(1, j), step(2, k)));
            }
        }
    }
    pts
}

pub fn cloud(points: Vec<Point3>) -> PointCloud {
    PointCloud::new(points).unwrap()
}

/// One-shot HTTP stub: answers each incoming request with the next canned
/// body and returns the request bodies it saw.
pub fn serve(bodies: Vec<String>) -> (String, std::thread::JoinHandle<Vec<String>>) {
    use std::io::{BufRead, BufReader, Read, Write};
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let mut seen = Vec::new();
        for body in bodies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
            }
            let mut buf = vec![0u8; length];
            reader.read_exact(&mut buf).unwrap();
            seen.push(String::from_utf8(buf).unwrap());
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                body.len(),
                body
            )
            .unwrap();
        }
        seen
    });
    (url, handle)
}

/// One demo scene: a scene type plus `(class, objectness)` for each proposal.
pub struct Walkthrough {
    pub name: &'static str,
    pub scene: &'static str,
    pub objects: &'static [(&'static str, f64)],
}

pub const WALKTHROUGHS: [Walkthrough; 3] = [
    Walkthrough {
        name: "conference_room",
        scene: "conference room",
        objects: &[("sofa", 0.93), ("chair", 0.88), ("bed", 0.6705), ("table", 0.91)],
    },
    Walkthrough {
        name: "library",
        scene: "library",
        objects: &[("bookshelf", 0.95), ("cabinet", 0.8148), ("table", 0.87)],
    },
    Walkthrough {
        name: "bathroom",
        scene: "bathroom",
        objects: &[("toilet", 0.42), ("sink", 0.9)],
    },
];

pub fn one_hot(dim: usize, axis: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[axis] = 1.0;
    v
}

impl Walkthrough {
    pub fn global_feature(&self, kb: &glis::glci::KnowledgeBase) -> Vec<f64> {
        let s = kb.scene_index(self.scene).unwrap();
        one_hot(kb.prototype_dim(), kb.scene_prototype_axis(s))
    }

    pub fn proposals(&self, kb: &glis::glci::KnowledgeBase) -> Vec<glis::baol::Proposal> {
        self.objects
            .iter()
            .enumerate()
            .map(|(i, &(class, objectness))| {
                let c = kb.class_index(class).unwrap();
                glis::baol::Proposal {
                    bbox: bx(1.5 * i as f64, 0.0, 0.5, 1.0, 0.8, 1.0, 0.0),
                    objectness,
                    feature: one_hot(kb.prototype_dim(), kb.class_prototype_axis(c)),
                }
            })
            .collect()
    }

    pub fn golden(&self) -> PathBuf {
        fixtures().join("walkthrough").join(format!("{}.transcript.jsonl", self.name))
    }
}

pub fn session_config(kb: &glis::glci::KnowledgeBase) -> glis::glci::SessionConfig {
    glis::glci::SessionConfig {
        scene_types: kb.scene_types.clone(),
        vocabulary: kb.classes.clone(),
        phi_keep: glis::glci::DEFAULT_PHI_KEEP,
    }
}
