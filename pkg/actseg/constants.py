# Default actor / action vocabulary. Index 0 is background in both.
ACTOR_NAMES = (
    "background",
    "adult",
    "baby",
    "ball",
    "bird",
    "car",
    "cat",
    "dog",
)

ACTION_NAMES = (
    "background",
    "climbing",
    "crawling",
    "eating",
    "flying",
    "jumping",
    "rolling",
    "running",
    "walking",
    "none",
)

# Actions each actor can perform: 42 pairs, plus background/background
ACTOR_ACTIONS = {
    "adult": ("climbing", "crawling", "eating", "jumping", "rolling", "running", "walking", "none"),
    "baby": ("climbing", "crawling", "rolling", "walking", "none"),
    "ball": ("flying", "jumping", "rolling", "none"),
    "bird": ("climbing", "eating", "flying", "jumping", "rolling", "walking", "none"),
    "car": ("flying", "jumping", "rolling", "running", "none"),
    "cat": ("climbing", "eating", "jumping", "rolling", "running", "walking", "none"),
    "dog": ("crawling", "eating", "jumping", "rolling", "running", "walking"),
}

# Column label for the joint background class in per-category tables
BACKGROUND_LABEL = "BG"

# Evaluation settings and metrics, in table order
SETTINGS = ("actor", "action", "actor_action")
METRICS = ("global_accuracy", "mean_class_accuracy", "mean_class_iou")
VARIANT_ALL = "all"
VARIANT_NON_BOUNDARY = "non_boundary"

SETTING_LABELS = {
    "actor": "Actor",
    "action": "Action",
    "actor_action": "Actor-Action",
}

METRIC_LABELS = {
    "global_accuracy": "ave",
    "mean_class_accuracy": "class ave",
    "mean_class_iou": "mIoU",
}

UNDEFINED = "undefined"

# Two-stage SGD schedules:
# (stage1 lr front-end, stage1 lr back-end, stage1 batch, stage1 iters,
#  stage2 lr, stage2 batch, stage2 iters, stage2 background lr)
TRAIN_PRESETS = {
    "paper": (2.5e-4, 5e-3, 10, 20000, 2.5e-4, 1, 80000, 2.5e-5),
    "toy": (0.05, 0.2, 4, 2000, 0.1, 1, 4000, 0.01),
}

# Streams fed to the front-end
STREAMS_RGB_FLOW = "rgb_flow"
STREAMS_RGB_ONLY = "rgb_only"

# Prediction heads
HEAD_REGION = "region"
HEAD_BASELINE = "baseline"

# Mask-quality levels for region masks, best first
MASK_LEVELS = ("gt", "fine", "coarse")

# Process exit codes
EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
