//! Triangle / axis-aligned box overlap by the separating axis theorem
//! (Akenine-Möller's formulation: 3 box normals via the triangle bounds,
//! the triangle normal, and the 9 edge-cross-axis directions).

type V3 = [f64; 3];

#[inline]
fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn cross(a: V3, b: V3) -> V3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn plane_box_overlap(normal: V3, vert: V3, half: V3) -> bool {
    let mut vmin = [0.0; 3];
    let mut vmax = [0.0; 3];
    for q in 0..3 {
        if normal[q] > 0.0 {
            vmin[q] = -half[q] - vert[q];
            vmax[q] = half[q] - vert[q];
        } else {
            vmin[q] = half[q] - vert[q];
            vmax[q] = -half[q] - vert[q];
        }
    }
    if dot(normal, vmin) > 0.0 {
        return false;
    }
    dot(normal, vmax) >= 0.0
}

/// True when the closed box `center ± half` and the triangle share a point.
pub fn tri_box_overlap(center: V3, half: V3, tri: [V3; 3]) -> bool {
    let v = [sub(tri[0], center), sub(tri[1], center), sub(tri[2], center)];
    let e = [sub(v[1], v[0]), sub(v[2], v[1]), sub(v[0], v[2])];

    // 9 axes: edge_i x unit_axis_a
    for edge in &e {
        for a in 0..3 {
            let mut unit = [0.0; 3];
            unit[a] = 1.0;
            let axis = cross(*edge, unit);
            let p = [dot(axis, v[0]), dot(axis, v[1]), dot(axis, v[2])];
            let lo = p[0].min(p[1]).min(p[2]);
            let hi = p[0].max(p[1]).max(p[2]);
            let rad = half[0] * axis[0].abs() + half[1] * axis[1].abs() + half[2] * axis[2].abs();
            if lo > rad || hi < -rad {
                return false;
            }
        }
    }

    // box normals against the triangle bounds
    for a in 0..3 {
        let lo = v[0][a].min(v[1][a]).min(v[2][a]);
        let hi = v[0][a].max(v[1][a]).max(v[2][a]);
        if lo > half[a] || hi < -half[a] {
            return false;
        }
    }

    plane_box_overlap(cross(e[0], e[1]), v[0], half)
}
