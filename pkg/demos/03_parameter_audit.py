"""Trained-parameter counts for the full-size architectures, with and without switch-off."""

from dctconv.cli import main

for preset in ("vgg16", "ae2"):
    print(f"== {preset}, plain")
    main(["count-params", "--preset", preset, "--assert-table"])
    print()

print("== vgg16, spectral with 90% of coefficients switched off")
main(["count-params", "--preset", "vgg16", "--p", "0.9", "--spectral"])

print("\n== ae2, how often whole filters or slices end up fully off at p=0.97 (observed vs expected)")
main(["mask-stats", "--preset", "ae2", "--p", "0.97"])
