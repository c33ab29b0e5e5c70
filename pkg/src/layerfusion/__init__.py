"""Training-free attention-level blending for layered image generation.

Library surface: numeric attention kernels, generative priors (structure
and content), soft/hard mask blending with attention sharing, a
deterministic toy diffusion pipeline emitting FG(RGBA)/BG/blended
triplets, alpha compositing with spatial edits, and bit-exact tensor/image
file formats. The ``layerfusion`` CLI fronts generation, dump analysis,
boundary-coefficient ablations and compositing.
"""

from .attention import (
    AttnProbMap,
    attention_with_probs,
    minmax_normalize,
    output_from_probs,
    resize_token_field,
    sigmoid,
    softmax,
)
from .blending import (
    BlendConfig,
    BlendLayer,
    BlendMasks,
    attn_blend_step,
    binarization_error,
    blend_blended,
    blend_foreground,
    make_masks,
    make_self_masks,
    shared_attention,
)
from .compositing import RgbaImage, SpatialEdit, alpha_blend, apply_edit, premultiply, unpremultiply
from .denoiser import (
    ToyConditioning,
    ToyDenoiser,
    ToyDenoiserConfig,
    build_denoiser,
    conditioning_from_prompt,
)
from .errors import ConfigurationError, DivergenceError, FormatError, ManifestError
from .pipeline import (
    AblationRow,
    LayerTriplet,
    MaskSnapshot,
    SamplerConfig,
    ablate_boundary,
    decode_alpha,
    decode_rgb,
    default_snapshot_steps,
    denoise_stream,
    generate_triplet,
    initial_latents,
)
from .priors import (
    ContentPrior,
    StructurePrior,
    content_prior,
    prior_pass,
    resize_prior,
    sparsity_scores,
    structure_prior,
)

__version__ = "0.1.0"
