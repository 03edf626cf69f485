/// Convex polygon with counter-clockwise vertices. An empty vertex list is the
/// empty polygon.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvexPolygon {
    vertices: Vec<[f64; 2]>,
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

impl ConvexPolygon {
    /// Wraps vertices that are already convex and counter-clockwise.
    pub fn from_ccw(vertices: Vec<[f64; 2]>) -> Self {
        if vertices.len() < 3 {
            return Self::default();
        }
        Self { vertices }
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Shoelace area, positive for counter-clockwise order.
    pub fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        if n < 3 {
            return 0.0;
        }
        let mut acc = 0.0;
        for i in 0..n {
            let p = self.vertices[i];
            let q = self.vertices[(i + 1) % n];
            acc += p[0] * q[1] - q[0] * p[1];
        }
        0.5 * acc
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    /// Sutherland-Hodgman clip of `self` against every edge of `clip`.
    pub fn intersection(&self, clip: &ConvexPolygon) -> ConvexPolygon {
        if self.is_empty() || clip.is_empty() {
            return Self::default();
        }
        let mut output = self.vertices.clone();
        let mut input = Vec::with_capacity(output.len() + 4);
        let n = clip.vertices.len();
        for i in 0..n {
            if output.is_empty() {
                break;
            }
            let a = clip.vertices[i];
            let b = clip.vertices[(i + 1) % n];
            std::mem::swap(&mut input, &mut output);
            output.clear();
            let m = input.len();
            for j in 0..m {
                let cur = input[j];
                let prev = input[(j + m - 1) % m];
                let cur_in = cross(a, b, cur) >= 0.0;
                let prev_in = cross(a, b, prev) >= 0.0;
                if cur_in {
                    if !prev_in {
                        output.push(segment_line_intersection(prev, cur, a, b));
                    }
                    output.push(cur);
                } else if prev_in {
                    output.push(segment_line_intersection(prev, cur, a, b));
                }
            }
        }
        Self::from_ccw(output)
    }
}

fn segment_line_intersection(p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let dp = cross(a, b, p);
    let dq = cross(a, b, q);
    let denom = dp - dq;
    if denom.abs() < 1e-300 {
        return q;
    }
    let t = dp / denom;
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}
