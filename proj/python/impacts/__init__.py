"""BIO sequence-labeling toolkit for ClinicalImpacts/SocialImpacts corpora.

Thin re-export of the compiled extension; see the package README for the
file formats and the `impacts` CLI.
"""

from impacts._impacts import (  # noqa: F401
    ConfigError,
    CorpusSplit,
    CrfModel,
    EntitySpan,
    EvalReport,
    IclRunResult,
    KappaResult,
    LlmResponse,
    NumericError,
    ParseError,
    TaggedSequence,
    TransportError,
    TypeScore,
    ValidationError,
    __version__,
    build_prompt,
    cohens_kappa,
    default_prompt_template,
    evaluate,
    extract_spans,
    load_corpus,
    load_crf,
    overlap,
    parse_conll,
    parse_response,
    predict,
    run_icl_eval,
    save_corpus,
    serialize_conll,
    spans_to_bio,
    stats_json,
    subsample,
    top_k_lexical,
    train_crf,
    validate_bio,
)
