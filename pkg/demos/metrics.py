"""
Image and text metrics
======================

MS-SSIM compares a corrected page with its clean original; edit distance
and CER compare OCR transcriptions.
"""

import numpy as np

from docillum import SynthSpec, apply_illumination, synth_clean_document
from docillum.metrics import alignment_counts, background_color_error, cer, edit_distance, ms_ssim, resize_to_area

spec = SynthSpec(256, seed=8)
clean = synth_clean_document(spec)
dim = apply_illumination(clean, [0.2, 0.1, -0.1], spec, np.random.default_rng(0))
darker = apply_illumination(clean, [-0.3, -0.4, -0.5], spec, np.random.default_rng(0))

print("MS-SSIM clean/clean  ", ms_ssim(clean, clean))
print("MS-SSIM clean/dim    ", round(ms_ssim(clean, dim), 4))
print("MS-SSIM clean/darker ", round(ms_ssim(clean, darker), 4))
print("background error     ", round(background_color_error(darker, clean), 4))

# evaluation resizes to a fixed pixel area first
print("resized shape", resize_to_area(np.zeros((1760, 1360, 3), np.float32), 598400).shape)

ref, hyp = "illumination", "ilumination!"
print("edit distance", edit_distance(ref, hyp), "S/D/I/C", alignment_counts(ref, hyp), "CER", round(cer(ref, hyp), 4))
