from .classifier import StyleClassifier, classifier_prob, classifier_prob_soft
from .discriminator import (NaturalnessDiscriminator, discriminator_prob,
                            discriminator_prob_soft)
from .generator import (GeneratorModel, generator_logprobs, greedy_decode,
                        greedy_decode_batch, soft_unroll,
                        teacher_forced_total_logprob)
from .lm import NeuralLM, lm_perplexity, lm_perplexity_batch

__all__ = [
    "GeneratorModel", "StyleClassifier", "NaturalnessDiscriminator", "NeuralLM",
    "generator_logprobs", "greedy_decode", "greedy_decode_batch", "soft_unroll",
    "teacher_forced_total_logprob", "classifier_prob", "classifier_prob_soft",
    "discriminator_prob", "discriminator_prob_soft", "lm_perplexity",
    "lm_perplexity_batch",
]
