"""felab: WDM fiber-link simulation and learned MIMO Volterra equalization."""

__version__ = "0.1.0"

from .channel import FiberParams, LinkSpec, edfa, ssfm_propagate, transmit
from .complexity import ComplexityReport, CostSpec, compare, fd_cost, fft_cost, td_cost
from .equalizer import (
    EqualizerParams,
    EqualizerSpec,
    LinearStageBank,
    build_linear_stages,
    equalize_block,
    equalize_stream,
    fir_field_filter,
    spm_activation,
    xpm_activation,
)
from .metrics import ChannelReport, analytic_ber, ber_to_snr, count_ber, evm_snr
from .signals import (
    FrequencyPlan,
    Modulation,
    SignalGrid,
    SymbolFrame,
    WdmEnsemble,
    demux,
    map_symbols,
    matched_filter,
    mux,
    shape_pulses,
)
from .training import (
    TrainConfig,
    adam_step,
    backward,
    init_params,
    mse_loss,
    run_training,
)
