"""Poisoning attacks: byzantine (untargeted) and backdoor (targeted)."""

from .base import (
    AttackContext,
    ConstraintSpec,
    PostconditionError,
    apply_constraint,
    checks_enabled,
    set_checks,
)
from .backdoor import (
    backdoor_local_train,
    craft_edgecase,
    craft_neurotoxin,
    craft_replace,
    craft_trigger_opt,
    dba_assign,
    optimize_trigger,
    top_k_mask,
)
from .byzantine import (
    craft_fang,
    craft_ipm,
    craft_labelflip,
    craft_lie,
    craft_median_tailored,
    craft_minmax,
    craft_noise,
    craft_signflip,
    craft_signguard_attack,
    craft_updateflip,
    fang_search,
    minmax_search,
)
from .registry import (
    ATTACK_KINDS,
    ATTACK_PARAMS,
    BACKDOOR_KINDS,
    BYZANTINE_KINDS,
    Attack,
    AttackSpec,
    build_attack,
)
