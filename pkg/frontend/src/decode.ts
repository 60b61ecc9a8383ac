// Display-side decoding of downlink payloads. This knowledge is duplicated
// from the simulators for rendering only; the raw hex is always shown too,
// so a wrong or impossible decode loses nothing.

import { STS_TYPE_LENGTHS } from "./commands.js";

export const WDE_IDS = new Set([0x01, 0x02, 0x03]);
const TERMINATOR = 0xac;

export interface DownlinkView {
    summary: string;
    wheelSpeed?: number; // present when the payload is a WDE telemetry reply
}

function int16be(hi: number, lo: number): number {
    const v = (hi << 8) | lo;
    return v >= 0x8000 ? v - 0x10000 : v;
}

export function summarizeDownlink(subsystemId: number, payload: Uint8Array): DownlinkView {
    if (WDE_IDS.has(subsystemId)) {
        if (payload.length === 5 && payload[0] === 0x01 && payload[4] === TERMINATOR) {
            const rpm = int16be(payload[2], payload[3]);
            return { summary: `WDE telemetry: ${rpm} rpm`, wheelSpeed: rpm };
        }
        if (payload.length === 3 && payload[0] === 0x02 && payload[2] === TERMINATOR) {
            return { summary: "WDE ack" };
        }
        if (payload.length === 2 && payload[0] === 0xee && payload[1] === TERMINATOR) {
            return { summary: "WDE nak" };
        }
    }
    if (payload.length > 0 && STS_TYPE_LENGTHS[payload[0]] === payload.length) {
        const type = payload[0].toString(16).padStart(2, "0");
        return { summary: `STS type ${type}, ${payload.length} B` };
    }
    if (payload.length === 8 && payload[0] === 0xb1 && payload[7] === TERMINATOR) {
        const volts = ((payload[2] << 8) | payload[3]) / 100;
        const amps = ((payload[4] << 8) | payload[5]) / 100;
        return { summary: `battery ${volts.toFixed(2)} V ${amps.toFixed(2)} A` };
    }
    if (payload.length === 10 && payload[0] === 0xc1 && payload[9] === TERMINATOR) {
        const temp = int16be(payload[2], payload[3]) / 100;
        return { summary: `housekeeping ${temp.toFixed(2)} C` };
    }
    if (payload.length > 0 && payload[payload.length - 1] === 0x0a
        && payload.every((b) => (b >= 0x20 && b < 0x7f) || b === 0x0a || b === 0x0d)) {
        const text = new TextDecoder().decode(payload).trim();
        return { summary: text.length > 48 ? text.slice(0, 45) + "..." : text };
    }
    return { summary: `${payload.length} B` };
}
