"""Streaming tag detection: finding control tags in text that arrives in
arbitrary slices.

Control tags are ordinary text, not special vocabulary entries, so a streamed
generation can split `<bigmodel>` anywhere. The scanner carries the longest
trailing fragment that could still become a tag and reports each complete tag
exactly once, at its absolute offset, no matter how the stream is chopped.
"""

import random

from tandem import ControlTags, ScannerState, scan_chunk, scan_text

tags = ControlTags()
text = "reasoning so far <bigmodel>a hard step</bigmodel> and onward <big"

print("full text:")
print(f"  {text!r}\n")

print("one-shot scan:")
for event in scan_text(text, tags):
    print(f"  {event.kind.value:>5} tag at offset {event.offset}")

print("\nnow the same text as a character-by-character stream:")
state = ScannerState()
for ch in text:
    state, events = scan_chunk(state, ch, tags)
    for event in events:
        print(f"  after feeding {state.absolute_offset:>3} chars -> "
              f"{event.kind.value} tag at offset {event.offset}")
print(f"  final carry: {state.carry!r}  (a tag prefix still waiting for more text)")

print("\nchunking invariance, 5 random chunkings of the same text:")
reference = scan_text(text, tags)
rng = random.Random(0)
for trial in range(5):
    state = ScannerState()
    streamed = []
    i = 0
    sizes = []
    while i < len(text):
        step = rng.randint(1, 9)
        sizes.append(step)
        state, events = scan_chunk(state, text[i : i + step], tags)
        streamed.extend(events)
        i += step
    same = streamed == reference
    print(f"  trial {trial}: chunk sizes {sizes[:8]}... -> events identical: {same}")
