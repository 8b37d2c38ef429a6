/**
 * In-browser device profile collection.
 *
 * Every function in this file is serialized into the probe page with
 * Function.prototype.toString and re-declared inside a plain <script>
 * block. They must stay named function declarations, reference each
 * other only by name, and touch nothing from module scope except
 * globals a browser also has (fetch, btoa, Intl, setTimeout). Imports
 * would break the embedded copy silently, so there are none.
 */

import type { GeoPair, ProbeResult, ProfileValue } from './profile.js';

export interface UserAgentDescription {
    os?: string;
    osVersion?: string;
    browserName?: string;
    browserVersion?: string;
}

export interface ProbeGeolocation {
    getCurrentPosition(
        success: (pos: { coords: { latitude: number; longitude: number } }) => void,
        error?: (err: unknown) => void,
        options?: { timeout?: number; maximumAge?: number },
    ): void;
}

export interface ProbeNavigator {
    userAgent: string;
    language?: string;
    platform?: string;
    plugins?: ArrayLike<{ name: string }>;
    geolocation?: ProbeGeolocation;
    hardwareConcurrency?: number;
    deviceMemory?: number;
    maxTouchPoints?: number;
    cookieEnabled?: boolean;
    doNotTrack?: string | null;
}

export interface ProbeScreen {
    width: number;
    height: number;
    availWidth?: number;
    availHeight?: number;
    colorDepth?: number;
}

export interface WebglContext {
    RENDERER: number;
    VENDOR: number;
    VERSION: number;
    getParameter(param: number): unknown;
    getExtension(name: string): { UNMASKED_RENDERER_WEBGL: number; UNMASKED_VENDOR_WEBGL: number } | null;
}

export interface ProbeDocument {
    characterSet?: string;
    createElement(tag: string): { getContext(kind: string): WebglContext | null };
}

export interface ProbeFetchResponse {
    ok: boolean;
    status: number;
    json(): Promise<unknown>;
}

export interface ProbeWindow {
    navigator: ProbeNavigator;
    screen: ProbeScreen;
    document: ProbeDocument;
    fetch(input: string, init?: Record<string, unknown>): Promise<ProbeFetchResponse>;
}

export interface ProbeOptions {
    geolocationTimeoutMs?: number;
}

/**
 * Pick OS and browser identity out of a user agent string. Covers the
 * engines a crawl realistically runs on; anything else comes back
 * empty rather than guessed.
 */
export function describeUserAgent(ua: string): UserAgentDescription {
    const out: UserAgentDescription = {};
    let m: RegExpMatchArray | null;
    if ((m = ua.match(/Windows NT ([\d.]+)/))) {
        out.os = 'Windows';
        out.osVersion = m[1];
    } else if ((m = ua.match(/Android ([\d.]+)/))) {
        out.os = 'Android';
        out.osVersion = m[1];
    } else if ((m = ua.match(/(?:iPhone|iPad).*OS (\d+[_\d]*)/))) {
        out.os = 'iOS';
        out.osVersion = m[1] ? m[1].replace(/_/g, '.') : undefined;
    } else if ((m = ua.match(/Mac OS X (\d+[_.\d]*)/))) {
        out.os = 'macOS';
        out.osVersion = m[1] ? m[1].replace(/_/g, '.') : undefined;
    } else if (ua.includes('CrOS')) {
        out.os = 'Chrome OS';
    } else if (ua.includes('Linux')) {
        out.os = 'Linux';
    }
    if ((m = ua.match(/Firefox\/([\d.]+)/)) && !ua.includes('Seamonkey')) {
        out.browserName = 'Firefox';
        out.browserVersion = m[1];
    } else if ((m = ua.match(/Edg[A-Za-z]*\/([\d.]+)/))) {
        out.browserName = 'Edge';
        out.browserVersion = m[1];
    } else if ((m = ua.match(/OPR\/([\d.]+)/))) {
        out.browserName = 'Opera';
        out.browserVersion = m[1];
    } else if ((m = ua.match(/Chrome\/([\d.]+)/))) {
        out.browserName = 'Chrome';
        out.browserVersion = m[1];
    } else if ((m = ua.match(/Version\/([\d.]+).*Safari/))) {
        out.browserName = 'Safari';
        out.browserVersion = m[1];
    }
    return out;
}

/**
 * Reduce a WebGL renderer string to the GPU marketing name. ANGLE
 * wraps the card name in one of two layouts; outside ANGLE the
 * renderer string is already the closest thing to a card name, so the
 * caller falls back to it when this returns null.
 */
export function extractGpuName(renderer: string): string | null {
    const angle = renderer.match(/^ANGLE \((.+)\)$/);
    if (!angle || !angle[1]) {
        return null;
    }
    const inner = angle[1];
    const parts = inner.split(', ');
    // New layout: "vendor, card api-details, backend". Old: "card api-details".
    const candidate = parts.length >= 3 ? parts[1] : inner;
    if (!candidate) {
        return null;
    }
    const cut = candidate.search(/ (?:Direct3D|D3D|OpenGL|Vulkan|Metal)/);
    const name = (cut >= 0 ? candidate.slice(0, cut) : candidate).trim();
    return name || null;
}

/**
 * Collect the WebGL attribute family. A context can be refused
 * (disabled, headless without GL) and the debug extension can be
 * absent; whatever cannot be read is simply left out.
 */
export function collectWebglAttributes(doc: ProbeDocument): Record<string, string> {
    const out: Record<string, string> = {};
    let gl: WebglContext | null = null;
    try {
        const canvas = doc.createElement('canvas');
        gl = canvas.getContext('webgl') || canvas.getContext('experimental-webgl');
    } catch (e) {
        return out;
    }
    if (!gl) {
        return out;
    }
    try {
        const renderer = String(gl.getParameter(gl.RENDERER) || '');
        const vendor = String(gl.getParameter(gl.VENDOR) || '');
        const version = String(gl.getParameter(gl.VERSION) || '');
        let unmaskedRenderer = '';
        let unmaskedVendor = '';
        const debug = gl.getExtension('WEBGL_debug_renderer_info');
        if (debug) {
            unmaskedRenderer = String(gl.getParameter(debug.UNMASKED_RENDERER_WEBGL) || '');
            unmaskedVendor = String(gl.getParameter(debug.UNMASKED_VENDOR_WEBGL) || '');
        }
        const fullRenderer = unmaskedRenderer || renderer;
        if (fullRenderer) {
            out.webgl_renderer = fullRenderer;
            out.gpu = extractGpuName(fullRenderer) || fullRenderer;
        }
        if (vendor) {
            out.webgl_vendor = vendor;
        }
        if (version) {
            out.webgl_version = version;
        }
        if (unmaskedVendor) {
            out.gpu_vendor = unmaskedVendor;
        }
    } catch (e) {
        // keep whatever was assigned before the failing read
    }
    return out;
}

/**
 * Geolocation behind its permission prompt. Resolves null on denial,
 * missing API or timeout; the attribute is then reported absent.
 */
export function requestGeolocation(nav: ProbeNavigator, timeoutMs: number): Promise<GeoPair | null> {
    return new Promise((resolve) => {
        const geo = nav.geolocation;
        if (!geo || typeof geo.getCurrentPosition !== 'function') {
            resolve(null);
            return;
        }
        let settled = false;
        const finish = (value: GeoPair | null) => {
            if (!settled) {
                settled = true;
                clearTimeout(timer);
                resolve(value);
            }
        };
        const timer = setTimeout(() => finish(null), timeoutMs);
        try {
            geo.getCurrentPosition(
                (pos) => finish([pos.coords.latitude, pos.coords.longitude]),
                () => finish(null),
                { timeout: timeoutMs, maximumAge: 60000 },
            );
        } catch (e) {
            finish(null);
        }
    });
}

/**
 * Ask the harness who we are. The probe cannot see its own public
 * address, so the harness echoes the address the connection came from.
 */
export async function lookupCallerIp(win: ProbeWindow): Promise<string | null> {
    try {
        const res = await win.fetch('/whoami');
        if (!res.ok) {
            return null;
        }
        const data = (await res.json()) as { ip?: unknown } | null;
        return data && typeof data.ip === 'string' && data.ip ? data.ip : null;
    } catch (e) {
        return null;
    }
}

/**
 * Collect the device profile from a live window. Core attributes an
 * API refuses to provide are left absent, never substituted; city is
 * never collectible in-page and is always absent.
 */
export async function captureProfile(win: ProbeWindow, options?: ProbeOptions): Promise<ProbeResult> {
    const nav = win.navigator;
    const scr = win.screen;
    const values: Record<string, ProfileValue> = {};
    const putText = (id: string, value: unknown) => {
        if (typeof value === 'string' && value) {
            values[id] = value;
        } else if (typeof value === 'number' && Number.isFinite(value)) {
            values[id] = String(value);
        } else if (typeof value === 'boolean') {
            values[id] = value ? 'true' : 'false';
        }
    };

    if (typeof scr.width === 'number' && typeof scr.height === 'number' && scr.width > 0 && scr.height > 0) {
        values.resolution = Math.round(scr.width) + 'x' + Math.round(scr.height);
    }
    putText('user_agent', nav.userAgent);
    putText('language', nav.language);
    putText('charset', win.document.characterSet);

    const described = describeUserAgent(nav.userAgent || '');
    putText('os', described.os);
    putText('os_version', described.osVersion);
    putText('browser_name', described.browserName);
    putText('browser_version', described.browserVersion);

    const webgl = collectWebglAttributes(win.document);
    for (const key in webgl) {
        putText(key, webgl[key]);
    }

    if (nav.plugins && nav.plugins.length > 0) {
        const names: string[] = [];
        for (let i = 0; i < nav.plugins.length; i++) {
            const plugin = nav.plugins[i];
            if (plugin && plugin.name) {
                names.push(plugin.name);
            }
        }
        if (names.length > 0) {
            values.installed_plugins = names;
        }
    }

    const geoTimeout = options && options.geolocationTimeoutMs ? options.geolocationTimeoutMs : 3000;
    const geo = await requestGeolocation(nav, geoTimeout);
    if (geo) {
        values.geolocation = geo;
    }

    const ip = await lookupCallerIp(win);
    if (ip) {
        values.ip_addresses = [ip];
    }

    putText('availablewidth', scr.availWidth);
    putText('availableheight', scr.availHeight);
    putText('colordepth', scr.colorDepth);
    putText('hardware_concurrency', nav.hardwareConcurrency);
    putText('device_memory', nav.deviceMemory);
    putText('maxtouchpoints', nav.maxTouchPoints);
    putText('cookie_enabled', nav.cookieEnabled);
    putText('do_not_track', nav.doNotTrack);
    putText('platform', nav.platform);
    try {
        putText('timezone', Intl.DateTimeFormat().resolvedOptions().timeZone);
    } catch (e) {
        // Intl can be stripped in minimal embedders
    }

    const browserDescription = [
        described.browserName || 'unknown browser',
        described.browserVersion || '',
        'on',
        described.os || 'unknown OS',
    ]
        .filter((part) => part)
        .join(' ');

    return {
        values: values,
        capturedAt: new Date().toISOString(),
        browserDescription: browserDescription,
    };
}

/** Everything the probe page needs re-declared in its script block. */
export const PROBE_PAGE_FUNCTIONS = [
    describeUserAgent,
    extractGpuName,
    collectWebglAttributes,
    requestGeolocation,
    lookupCallerIp,
    captureProfile,
] as const;
