//! Independent reference implementations shared by the integration tests.
//! None of them call into the library code they check.

#![allow(dead_code)]

use std::collections::HashMap;

/// Index of the brace closing the one opened at `open`.
fn matching(tokens: &[&str], open: usize, left: &str, right: &str) -> usize {
    let mut depth = 0;
    for (i, t) in tokens.iter().enumerate().skip(open) {
        if *t == left {
            depth += 1;
        } else if *t == right {
            depth -= 1;
            if depth == 0 {
                return i;
            }
        }
    }
    panic!("unbalanced {left} at {open}");
}

/// End (inclusive) of the script argument starting at `i`: a braced group
/// or a single token.
fn argument_end(tokens: &[&str], i: usize) -> usize {
    if tokens[i] == "{" {
        matching(tokens, i, "{", "}")
    } else {
        i
    }
}

/// Brute-force position labels: collect every region as an inclusive token
/// range, then give each token the number of regions covering it and the
/// kind of the innermost one.
pub fn brute_labels(tokens: &[&str]) -> (Vec<usize>, Vec<&'static str>) {
    let mut regions: Vec<(usize, usize, &'static str)> = Vec::new();
    for i in 0..tokens.len() {
        match tokens[i] {
            "^" => regions.push((i, argument_end(tokens, i + 1), "upper")),
            "_" => regions.push((i, argument_end(tokens, i + 1), "lower")),
            "\\frac" => {
                let num_end = matching(tokens, i + 1, "{", "}");
                let den_end = matching(tokens, num_end + 1, "{", "}");
                regions.push((i + 1, num_end, "upper"));
                regions.push((num_end + 1, den_end, "lower"));
            }
            "\\sqrt" => {
                let mut j = i + 1;
                if tokens[j] == "[" {
                    let close = matching(tokens, j, "[", "]");
                    regions.push((j, close, "upper"));
                    j = close + 1;
                }
                regions.push((j, matching(tokens, j, "{", "}"), "middle"));
            }
            _ => {}
        }
    }
    let mut depths = Vec::with_capacity(tokens.len());
    let mut rel = Vec::with_capacity(tokens.len());
    for t in 0..tokens.len() {
        let covering: Vec<_> = regions.iter().filter(|(a, b, _)| *a <= t && t <= *b).collect();
        depths.push(covering.len());
        // regions nest, so the innermost one starts last
        rel.push(covering.iter().max_by_key(|(a, _, _)| *a).map_or("middle", |r| r.2));
    }
    (depths, rel)
}

/// Token multiplicities.
pub fn tally<'a>(tokens: impl IntoIterator<Item = &'a str>) -> HashMap<&'a str, usize> {
    let mut m = HashMap::new();
    for t in tokens {
        *m.entry(t).or_insert(0) += 1;
    }
    m
}

/// Edit distance by memoised recursion over suffixes, filled column by
/// column from the far end.
pub fn edit_distance_oracle<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (n, m) = (a.len(), b.len());
    // d[j][i] = distance between a[i..] and b[j..]
    let mut d = vec![vec![0usize; n + 1]; m + 1];
    for j in (0..=m).rev() {
        for i in (0..=n).rev() {
            d[j][i] = if i == n {
                m - j
            } else if j == m {
                n - i
            } else if a[i] == b[j] {
                d[j + 1][i + 1]
            } else {
                1 + d[j + 1][i + 1].min(d[j][i + 1]).min(d[j + 1][i])
            };
        }
    }
    d[0][0]
}

/// Triple-loop matrix product of row-major `(n, k)` and `(k, m)`.
pub fn naive_matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            for p in 0..k {
                out[i * m + j] += a[i * k + p] * b[p * m + j];
            }
        }
    }
    out
}

/// Direct convolution of `(c, h, w)` by `(o, c, k, k)` with zero padding.
pub fn naive_conv(
    x: &[f64],
    (c, h, w): (usize, usize, usize),
    wt: &[f64],
    (o, k): (usize, usize),
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; o * oh * ow];
    for oc in 0..o {
        for y in 0..oh {
            for xx in 0..ow {
                let mut s = 0.0;
                for ic in 0..c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (y * stride + ky) as isize - pad as isize;
                            let ix = (xx * stride + kx) as isize - pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                s += x[ic * h * w + iy as usize * w + ix as usize]
                                    * wt[((oc * c + ic) * k + ky) * k + kx];
                            }
                        }
                    }
                }
                out[(oc * oh + y) * ow + xx] = s;
            }
        }
    }
    (out, oh, ow)
}

/// Counts `<trace` start tags by plain text scanning.
pub fn count_trace_tags(xml: &str) -> usize {
    xml.match_indices("<trace").filter(|(i, _)| {
        let rest = &xml[i + 6..];
        rest.starts_with('>') || rest.starts_with(' ') || rest.starts_with('/')
    }).count()
}
