import os
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Logging Configuration
LOG_LEVEL = os.getenv("BFLC_LOG_LEVEL", "INFO").upper()

# Output Configuration
DEFAULT_OUTPUT_DIR = os.getenv("BFLC_OUTPUT_DIR", "runs")

# Local Training Defaults
DEFAULT_LEARNING_RATE = float(os.getenv("BFLC_LEARNING_RATE", "0.1"))
DEFAULT_EPOCHS = int(os.getenv("BFLC_EPOCHS", "1"))
DEFAULT_BATCH_SIZE = int(os.getenv("BFLC_BATCH_SIZE", "32"))
DEFAULT_INIT_SCALE = 0.01  # std of the zero-mean Gaussian used by init_model

# Consensus Defaults
DEFAULT_THETA = 0.5  # AbsoluteThreshold
DEFAULT_RHO = 0.95  # RelativeToGlobal
ROUND_RETRY_CAP = int(os.getenv("BFLC_ROUND_RETRY_CAP", "5"))

# Incentive Defaults
DEFAULT_REWARD_POOL = int(os.getenv("BFLC_REWARD_POOL", "100"))
DEFAULT_PERMISSION_FEE = int(os.getenv("BFLC_PERMISSION_FEE", "1"))
DEFAULT_TREASURY = int(os.getenv("BFLC_TREASURY", "1000000"))

# Output Formatting
PROBABILITY_DIGITS = 12
