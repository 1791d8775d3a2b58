"""Embedded bitmap fonts.

Two banks: a 5x7 font over the 36-class alphabet A-Z0-9, and a bank of
eight dense 7x7 glyphs standing in for structurally complex characters.
Bitmaps are row strings of '#' (stroke) and '.' (gap).
"""
import numpy as np

_BASIC = {
    "A": (".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"),
    "B": ("####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."),
    "C": (".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."),
    "D": ("####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####."),
    "E": ("#####", "#....", "#....", "####.", "#....", "#....", "#####"),
    "F": ("#####", "#....", "#....", "####.", "#....", "#....", "#...."),
    "G": (".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".###."),
    "H": ("#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"),
    "I": ("#####", "..#..", "..#..", "..#..", "..#..", "..#..", "#####"),
    "J": ("..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."),
    "K": ("#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"),
    "L": ("#....", "#....", "#....", "#....", "#....", "#....", "#####"),
    "M": ("#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"),
    "N": ("#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#", "#...#"),
    "O": (".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."),
    "P": ("####.", "#...#", "#...#", "####.", "#....", "#....", "#...."),
    "Q": (".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"),
    "R": ("####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"),
    "S": (".####", "#....", "#....", ".###.", "....#", "....#", "####."),
    "T": ("#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."),
    "U": ("#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."),
    "V": ("#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."),
    "W": ("#...#", "#...#", "#...#", "#.#.#", "#.#.#", "##.##", "#...#"),
    "X": ("#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"),
    "Y": ("#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."),
    "Z": ("#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"),
    "0": (".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."),
    "1": ("..#..", ".##..", "..#..", "..#..", "..#..", "..#..", "#####"),
    "2": (".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"),
    "3": ("####.", "....#", "....#", ".###.", "....#", "....#", "####."),
    "4": ("...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."),
    "5": ("#####", "#....", "####.", "....#", "....#", "#...#", ".###."),
    "6": (".###.", "#....", "#....", "####.", "#...#", "#...#", ".###."),
    "7": ("#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."),
    "8": (".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."),
    "9": (".###.", "#...#", "#...#", ".####", "....#", "....#", ".###."),
}

# dense stand-ins for structurally complex glyphs: many strokes, little gap
_DENSE = {
    "A": ("#######", "#.....#", "#.###.#", "#.#.#.#", "#.###.#", "#.....#", "#######"),
    "B": ("#.#.#.#", ".#.#.#.", "#.#.#.#", ".#.#.#.", "#.#.#.#", ".#.#.#.", "#.#.#.#"),
    "C": ("#######", "...#...", "#######", "...#...", "#######", "...#...", "#######"),
    "D": ("#######", "......#", "#####.#", "#...#.#", "#.###.#", "#.....#", "#######"),
    "E": ("##...##", "###.###", ".#####.", "..###..", ".#####.", "###.###", "##...##"),
    "F": ("#.#.#.#", "#.#.#.#", "#######", "#.#.#.#", "#######", "#.#.#.#", "#.#.#.#"),
    "G": ("####.##", "#..#.#.", "####.##", ".#...#.", "####.##", "#..#.#.", "####.##"),
    "H": ("#######", "##...##", "#.#.#.#", "#..#..#", "#.#.#.#", "##...##", "#######"),
}


class Font:
    """A fixed-size bitmap font with a class id per glyph."""

    def __init__(self, name, table):
        self.name = name
        self.alphabet = "".join(table.keys())
        self.bitmaps = {
            ch: np.array([[1.0 if c == "#" else 0.0 for c in row] for row in rows])
            for ch, rows in table.items()
        }
        shapes = {b.shape for b in self.bitmaps.values()}
        assert len(shapes) == 1, "font glyphs must share one bitmap size"
        self.glyph_h, self.glyph_w = shapes.pop()

    def class_id(self, ch):
        return self.alphabet.index(ch)

    def char(self, class_id):
        return self.alphabet[class_id]

    def bitmap(self, ch):
        return self.bitmaps[ch]


FONT_BASIC = Font("basic5x7", _BASIC)
FONT_DENSE = Font("dense7x7", _DENSE)

FONTS = {f.name: f for f in (FONT_BASIC, FONT_DENSE)}


def get_font(name):
    if name not in FONTS:
        raise KeyError(f"unknown font {name!r}; have {sorted(FONTS)}")
    return FONTS[name]
