#pragma once

#include "malafide/adam.hpp"
#include "malafide/asv.hpp"
#include "malafide/attack.hpp"
#include "malafide/cm_training.hpp"
#include "malafide/convolution.hpp"
#include "malafide/corpus.hpp"
#include "malafide/detector.hpp"
#include "malafide/error.hpp"
#include "malafide/filter.hpp"
#include "malafide/io.hpp"
#include "malafide/metrics.hpp"
#include "malafide/pipeline.hpp"
#include "malafide/spectrum.hpp"
#include "malafide/waveform.hpp"
#include "malafide/wav_io.hpp"
