// Section marks. The calls stay in the generated assembly and bracket the
// code that is checked for compiler anomalies.
#pragma once

#define MVEE_MARKS(id, in_type, out_type)        \
    extern "C" void mvee_begin_##id(in_type);    \
    extern "C" void mvee_end_##id(out_type);

#define gen_begin_mark(id, type, value) mvee_begin_##id(static_cast<type>(value))
#define gen_end_mark(id, type, value) mvee_end_##id(static_cast<type>(value))
