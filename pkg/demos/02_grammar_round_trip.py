#!/usr/bin/env python3
"""How grounded model replies turn into pixel boxes and back."""

from intentground import BBox, ImageSize, extract_category, load_grammars, parse_boxes, serialize_box


def main():
    size = ImageSize(640, 480)
    box = BBox(64, 48, 320, 240)
    for name, grammar in load_grammars().items():
        tokens = serialize_box(box, size, grammar)
        parsed = parse_boxes(f"The object is here: {tokens}", size, grammar)
        recovered = parsed.boxes[0]
        print(f"{name}: {tokens}")
        print(f"  parsed back to {recovered.to_list()} (status {parsed.status})")

    noisy = "I think it's {<30><30><20><20>} or maybe nothing"
    grammar = load_grammars()["curly-bins-100"]
    print(f"inverted corners -> status {parse_boxes(noisy, size, grammar).status}")
    print(f"prose only       -> status {parse_boxes('no box here', size, grammar).status}")

    for reply in ("Chair.", "chair, stool", "  The handbag "):
        print(f"extract_category({reply!r}) = {extract_category(reply)!r}")


if __name__ == "__main__":
    main()
