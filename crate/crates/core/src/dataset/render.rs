//! Box layout of a position forest onto a bitmap.
//!
//! Every box is measured from its axis: rows `-asc..desc`, with the axis at
//! row 0. Depth-0 glyphs are drawn at twice the font size, deeper ones at
//! font size.

use super::font::{glyph, GLYPH_H, GLYPH_W};
use super::Image;
use crate::error::Result;
use crate::latex::TokenSeq;
use crate::posforest::{parse_forest, ForestNode, NodeKind};

/// Height of every rendered synthetic image.
pub const IMAGE_HEIGHT: usize = 64;
/// Blank border kept on each side.
pub const MARGIN: usize = 4;

enum Mark {
    Glyph { token: String, x: i32, y: i32, scale: i32 },
    Rect { x: i32, y: i32, w: i32, h: i32 },
}

struct Layout {
    w: i32,
    asc: i32,
    desc: i32,
    marks: Vec<Mark>,
}

impl Layout {
    fn empty() -> Self {
        Layout {
            w: 0,
            asc: 0,
            desc: 0,
            marks: Vec::new(),
        }
    }

    fn height(&self) -> i32 {
        self.asc + self.desc
    }

    fn place(&mut self, other: Layout, dx: i32, dy: i32) {
        for m in other.marks {
            self.marks.push(match m {
                Mark::Glyph { token, x, y, scale } => Mark::Glyph {
                    token,
                    x: x + dx,
                    y: y + dy,
                    scale,
                },
                Mark::Rect { x, y, w, h } => Mark::Rect {
                    x: x + dx,
                    y: y + dy,
                    w,
                    h,
                },
            });
        }
    }
}

fn scale(depth: usize) -> i32 {
    if depth == 0 {
        2
    } else {
        1
    }
}

fn row(nodes: &[ForestNode], toks: &TokenSeq, depth: usize) -> Layout {
    let gap = scale(depth);
    let mut out = Layout::empty();
    for (i, n) in nodes.iter().enumerate() {
        let l = node(n, toks, depth);
        let x = if i == 0 { 0 } else { out.w + gap };
        out.asc = out.asc.max(l.asc);
        out.desc = out.desc.max(l.desc);
        out.w = x + l.w;
        out.place(l, x, 0);
    }
    if nodes.is_empty() {
        // an empty group still takes a little room
        let s = scale(depth);
        out.w = 2 * s;
        out.asc = 3 * s;
        out.desc = 4 * s;
    }
    out
}

fn node(n: &ForestNode, toks: &TokenSeq, depth: usize) -> Layout {
    match n.kind {
        NodeKind::Atom => {
            let s = scale(depth);
            let h = GLYPH_H as i32 * s;
            let asc = h / 2;
            Layout {
                w: GLYPH_W as i32 * s,
                asc,
                desc: h - asc,
                marks: vec![Mark::Glyph {
                    token: toks[n.token_span.start].as_str().to_owned(),
                    x: 0,
                    y: -asc,
                    scale: s,
                }],
            }
        }
        NodeKind::Group => row(&n.main, toks, depth),
        NodeKind::SupSub => {
            let base = row(&n.main, toks, depth);
            let mut out = Layout {
                w: base.w,
                asc: base.asc,
                desc: base.desc,
                marks: Vec::new(),
            };
            let x = base.w + 1;
            out.place(base, 0, 0);
            if n.upper_span.is_some() {
                let sup = row(&n.upper, toks, depth + 1);
                out.asc = out.asc.max(1 + sup.height());
                out.w = out.w.max(x + sup.w);
                let dy = -1 - sup.desc;
                out.place(sup, x, dy);
            }
            if n.lower_span.is_some() {
                let sub = row(&n.lower, toks, depth + 1);
                out.desc = out.desc.max(1 + sub.height());
                out.w = out.w.max(x + sub.w);
                let dy = 1 + sub.asc;
                out.place(sub, x, dy);
            }
            out
        }
        NodeKind::Fraction => {
            let num = row(&n.upper, toks, depth + 1);
            let den = row(&n.lower, toks, depth + 1);
            let w = num.w.max(den.w) + 2;
            let mut out = Layout {
                w,
                asc: 1 + num.height(),
                desc: 2 + den.height(),
                marks: vec![Mark::Rect { x: 0, y: 0, w, h: 1 }],
            };
            let (nx, ny) = ((w - num.w) / 2, -1 - num.desc);
            let (dx, dy) = ((w - den.w) / 2, 2 + den.asc);
            out.place(num, nx, ny);
            out.place(den, dx, dy);
            out
        }
        NodeKind::Sqrt => {
            let rad = row(&n.main, toks, depth + 1);
            let index = n.upper_span.is_some().then(|| row(&n.upper, toks, depth + 1));
            let shift = index.as_ref().map_or(0, |l| l.w);
            let top = -rad.asc - 2;
            let mut out = Layout {
                w: shift + 5 + rad.w + 1,
                asc: rad.asc + 2,
                desc: rad.desc,
                marks: vec![
                    Mark::Rect { x: shift, y: 0, w: 2, h: 1 },
                    Mark::Rect { x: shift + 1, y: 0, w: 1, h: rad.desc },
                    Mark::Rect { x: shift + 2, y: top, w: 1, h: rad.desc - top },
                    Mark::Rect { x: shift + 2, y: top, w: rad.w + 4, h: 1 },
                ],
            };
            if let Some(ix) = index {
                let dy = -2 - ix.desc;
                out.asc = out.asc.max(2 + ix.height());
                out.place(ix, 0, dy);
            }
            out.place(rad, shift + 5, 0);
            out
        }
    }
}

fn paint(layout: &Layout) -> Image {
    let (h, w) = (layout.height().max(1) as usize, layout.w.max(1) as usize);
    let mut img = Image::blank(h, w);
    let mut dot = |r: i32, c: i32| {
        let (r, c) = (r + layout.asc, c);
        if r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w {
            img.set(r as usize, c as usize, 1.0);
        }
    };
    for m in &layout.marks {
        match m {
            Mark::Glyph { token, x, y, scale } => {
                let bits = glyph(token);
                for (gr, bits) in bits.iter().enumerate() {
                    for (gc, &on) in bits.iter().enumerate() {
                        if !on {
                            continue;
                        }
                        for dr in 0..*scale {
                            for dc in 0..*scale {
                                dot(y + gr as i32 * scale + dr, x + gc as i32 * scale + dc);
                            }
                        }
                    }
                }
            }
            Mark::Rect { x, y, w, h } => {
                for r in *y..y + h {
                    for c in *x..x + w {
                        dot(r, c);
                    }
                }
            }
        }
    }
    img
}

/// Renders a token sequence with the built-in font.
///
/// The result is [`IMAGE_HEIGHT`] rows tall with the drawing centred
/// vertically and [`MARGIN`] blank columns on each side. A drawing taller
/// than the space between the margins is shrunk by nearest neighbour.
pub fn render_synthetic(seq: &TokenSeq) -> Result<Image> {
    let forest = parse_forest(seq)?;
    let content = paint(&row(&forest, seq, 0));
    let room = IMAGE_HEIGHT - 2 * MARGIN;
    let content = if content.height() > room {
        let w = (content.width() * room).div_ceil(content.height()).max(1);
        content.resize_nearest(room, w)
    } else {
        content
    };
    let top = (IMAGE_HEIGHT - content.height()) / 2;
    Ok(content.pad_to(IMAGE_HEIGHT, content.width() + 2 * MARGIN, top, MARGIN))
}
