//! A fixed 5×7 bitmap font for the synthetic renderer.

pub const GLYPH_W: usize = 5;
pub const GLYPH_H: usize = 7;

type Bitmap = [&'static str; GLYPH_H];

const FALLBACK: Bitmap = ["#####", "#...#", "#...#", "#...#", "#...#", "#...#", "#####"];

#[rustfmt::skip]
const GLYPHS: &[(&str, Bitmap)] = &[
    ("0", [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."]),
    ("1", ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."]),
    ("2", [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"]),
    ("3", ["#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."]),
    ("4", ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."]),
    ("5", ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."]),
    ("6", ["..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."]),
    ("7", ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."]),
    ("8", [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."]),
    ("9", [".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."]),
    ("a", [".....", ".....", ".###.", "....#", ".####", "#...#", ".####"]),
    ("b", ["#....", "#....", "#.##.", "##..#", "#...#", "#...#", "####."]),
    ("c", [".....", ".....", ".###.", "#....", "#....", "#...#", ".###."]),
    ("n", [".....", ".....", "#.##.", "##..#", "#...#", "#...#", "#...#"]),
    ("x", [".....", ".....", "#...#", ".#.#.", "..#..", ".#.#.", "#...#"]),
    ("y", [".....", ".....", "#...#", "#...#", ".####", "....#", ".###."]),
    ("z", [".....", ".....", "#####", "...#.", "..#..", ".#...", "#####"]),
    ("\\alpha", [".....", ".....", ".##.#", "#..#.", "#..#.", "#..#.", ".##.#"]),
    ("\\beta", [".##..", "#..#.", "#.#..", "#..#.", "#...#", "##..#", "#.##."]),
    ("\\pi", [".....", ".....", "#####", ".#.#.", ".#.#.", ".#.#.", ".#..#"]),
    ("\\theta", [".###.", "#...#", "#...#", "#####", "#...#", "#...#", ".###."]),
    ("+", [".....", "..#..", "..#..", "#####", "..#..", "..#..", "....."]),
    ("-", [".....", ".....", ".....", "#####", ".....", ".....", "....."]),
    ("=", [".....", ".....", "#####", ".....", "#####", ".....", "....."]),
    ("\\times", [".....", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "....."]),
    ("(", ["...#.", "..#..", ".#...", ".#...", ".#...", "..#..", "...#."]),
    (")", [".#...", "..#..", "...#.", "...#.", "...#.", "..#..", ".#..."]),
];

/// The bitmap of `token`, row-major `GLYPH_H × GLYPH_W`. Tokens without a
/// drawing get a hollow box.
pub fn glyph(token: &str) -> [[bool; GLYPH_W]; GLYPH_H] {
    let rows = GLYPHS
        .iter()
        .find(|(t, _)| *t == token)
        .map(|(_, b)| b)
        .unwrap_or(&FALLBACK);
    let mut out = [[false; GLYPH_W]; GLYPH_H];
    for (r, row) in rows.iter().enumerate() {
        for (c, ch) in row.bytes().enumerate() {
            out[r][c] = ch == b'#';
        }
    }
    out
}
