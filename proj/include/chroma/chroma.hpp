#pragma once

// Umbrella include for the whole library.

#include "checkpoint.hpp"
#include "cli.hpp"
#include "compress.hpp"
#include "config.hpp"
#include "datasets.hpp"
#include "glyphs.hpp"
#include "gradcheck.hpp"
#include "hash.hpp"
#include "imaging.hpp"
#include "metrics.hpp"
#include "nn.hpp"
#include "rng.hpp"
#include "tensor.hpp"
#include "trainers.hpp"
#include "vae.hpp"
